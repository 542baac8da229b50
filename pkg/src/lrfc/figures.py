"""Figure rendering for run reports.

All figures go through the Agg backend straight to PNG files next to the
delimited outputs.  The PNG metadata is stripped of the writer signature
so repeated runs with identical inputs produce identical bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .trajectory import ExperimentRecord

_SAVE_OPTS = {"dpi": 100, "metadata": {"Software": None}}


def save_training_curve(losses, errors, path) -> None:
    """Loss and error per epoch on twin axes."""
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = range(1, len(losses) + 1)
    ax.plot(epochs, losses, color="tab:blue", label="loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss", color="tab:blue")
    twin = ax.twinx()
    twin.plot(epochs, errors, color="tab:red", label="train error")
    twin.set_ylabel("training error", color="tab:red")
    ax.set_title("baseline training")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_OPTS)
    plt.close(fig)


def save_error_curve(record: ExperimentRecord, path) -> None:
    """Per-step error drop and recovery, ending at the factorized phase."""
    xs = [0]
    pre = [record.baseline_error]
    post = [record.baseline_error]
    for step in record.steps:
        xs.append(step.step)
        pre.append(step.pre_retrain_error)
        post.append(step.post_retrain_error)
    if record.final_error is not None:
        xs.append(len(record.steps) + 1)
        pre.append(record.final_pre_error)
        post.append(record.final_error)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(xs, pre, marker="o", color="tab:orange", label="after compression")
    ax.plot(xs, post, marker="o", color="tab:green", label="after retraining")
    ax.set_xlabel("step (0 = baseline, last = factorized)")
    ax.set_ylabel("test error")
    ax.set_title("compression steps")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, **_SAVE_OPTS)
    plt.close(fig)


def save_search_trace(record: ExperimentRecord, path) -> None:
    """Controller reward trace per searched step."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for step in record.steps:
        if step.search is None:
            continue
        episodes = range(len(step.search.mean_rewards))
        label = f"step {step.step}"
        if step.target is not None:
            label += f" (t={step.target:g})"
        lines = ax.plot(episodes, step.search.mean_rewards, alpha=0.4)
        ax.plot(
            episodes,
            step.search.baselines,
            color=lines[0].get_color(),
            linewidth=2,
            label=label,
        )
    ax.set_xlabel("episode")
    ax.set_ylabel("reward (thin: episode mean, thick: moving baseline)")
    ax.set_title("scheme search")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, **_SAVE_OPTS)
    plt.close(fig)


def save_error_histogram(samples_by_label: dict[str, list], path, bins: int = 25) -> None:
    """Distribution of sampled-scheme errors, one overlay per target."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, samples in samples_by_label.items():
        errors = [error for _, _, error in samples]
        ax.hist(errors, bins=bins, alpha=0.55, label=label)
    ax.set_xlabel("test error without retraining")
    ax.set_ylabel("sampled schemes")
    ax.set_title("one-shot scheme quality distribution")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, **_SAVE_OPTS)
    plt.close(fig)
