"""
Builders for synthetic epochs used across the tests.
"""

from typing import Optional

import numpy as np

from erpdecoder.core import EPOCH_SAMPLES, Epoch, IconId, QualityFlag, TrialKind, TrialLabel


def make_epoch(
    trial_index: int = 0,
    icon: int = 0,
    target: bool = False,
    *,
    run: int = 0,
    subject: str = "s001",
    session: str = "lab1",
    data: Optional[np.ndarray] = None,
    onset_index: int = 1000,
    quality: QualityFlag = QualityFlag.KEPT,
) -> Epoch:
    return Epoch(
        subject=subject,
        session=session,
        run=run,
        trial_index=trial_index,
        repetition=trial_index // 6,
        label=TrialLabel(TrialKind.TARGET if target else TrialKind.NON_TARGET, IconId(icon)),
        onset_index=onset_index,
        t0=onset_index / 500,
        data=np.zeros((3, EPOCH_SAMPLES)) if data is None else data,
        quality=quality,
    )


def make_run(
    run: int,
    target_icon: int,
    rng: np.random.Generator,
    *,
    n_reps: int = 3,
    subject: str = "s001",
    session: str = "car1",
    target_amplitude: float = 8.0,
    noise_sd: float = 2.0,
) -> list[Epoch]:
    """A run of `n_reps` blocks, targets carry a positive bump around 400 ms on Cz and Pz"""
    times = -100 + 2.0 * np.arange(EPOCH_SAMPLES)
    bump = target_amplitude * np.exp(-((times - 400) ** 2) / (2 * 60.0**2))
    epochs = []
    for trial_index in range(6 * n_reps):
        icon = trial_index % 6
        data = rng.normal(0.0, noise_sd, size=(3, EPOCH_SAMPLES))
        if icon == target_icon:
            data[:2] += bump
        epochs.append(
            make_epoch(
                trial_index,
                icon,
                icon == target_icon,
                run=run,
                subject=subject,
                session=session,
                data=data,
                onset_index=2000 + 400 * trial_index,
            )
        )
    return epochs
