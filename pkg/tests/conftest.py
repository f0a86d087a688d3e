import pickle

import numpy as np
import pytest
import torch

from eegdiff.data import make_toy_corpus, normalize, save_dataset
from eegdiff.unet import DenoiserConfig, build_denoiser

TINY = DenoiserConfig(
    base_width=8,
    channel_multipliers=(1, 2),
    blocks_per_stage=1,
    attention_resolution=16,
    dropout=0.0,
    gamma_embed_dim=16,
)


class OracleDenoiser:
    """Returns the noise that would make ``target`` the exact clean signal."""

    def __init__(self, target):
        self.target = np.asarray(target, dtype=np.float64)

    def __call__(self, x_delta, y_t, gamma):
        g = np.asarray(gamma, dtype=np.float64)
        if g.ndim == 1:
            g = g[:, None, None]
        return (np.asarray(y_t) - np.sqrt(g) * self.target) / np.sqrt(1.0 - g)


def write_deap_fixture(directory, n_subjects=3, n_trials=4, seed=0, n_channels=40,
                       n_samples=8064, ratings=None):
    """DEAP-structured ``sNN.dat`` pickles: data (trials, 40, 8064), labels (trials, 4)."""
    rng = np.random.default_rng(seed)
    directory.mkdir(parents=True, exist_ok=True)
    for s in range(1, n_subjects + 1):
        data = rng.standard_normal((n_trials, n_channels, n_samples)).astype(np.float32)
        # tag each sample with (subject, trial, second) so segmentation can be checked
        data[:, 0, :] = s
        data[:, 1, :] = np.arange(n_trials)[:, None]
        data[:, 2, :] = (np.arange(n_samples) // 128)[None, :]
        labels = rng.uniform(1, 9, size=(n_trials, 4)) if ratings is None else ratings
        with open(directory / f"s{s:02d}.dat", "wb") as fh:
            pickle.dump({"data": data, "labels": labels}, fh)
    return directory


@pytest.fixture(autouse=True)
def _seed_everything():
    torch.manual_seed(0)
    np.random.seed(0)


@pytest.fixture
def tiny_config():
    return TINY


@pytest.fixture
def tiny_denoiser():
    return build_denoiser(TINY, (2, 16), seed=0)


@pytest.fixture
def toy_dataset():
    return normalize(make_toy_corpus(n_train=80, n_test=20, length=16, sample_rate=16,
                                     freqs=(2.0, 5.0), noise=0.5, seed=0))


@pytest.fixture
def toy_dataset_path(tmp_path, toy_dataset):
    return save_dataset(toy_dataset, tmp_path / "toy")


# ---------------------------------------------------------------------------
# acceptance verdicts: one PASS/FAIL line per criterion in the terminal summary

_VERDICTS: dict[tuple[int, str], list[tuple[str, bool, str]]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or not (rep.when == "call" or rep.failed or rep.skipped):
        return
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    case = item.callspec.id if hasattr(item, "callspec") else ""
    _VERDICTS.setdefault(tuple(marker.args), []).append((case, rep.passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for (number, title), cases in sorted(_VERDICTS.items()):
        ok = all(passed for _, passed, _ in cases)
        parts = [
            f"{case}={'ok' if passed else 'FAIL'}" + (f" ({detail})" if detail else "")
            if case else detail
            for case, passed, detail in cases
        ]
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number}: {title}"
        if any(parts):
            line += "  |  " + ", ".join(p for p in parts if p)
        terminalreporter.write_line(line)
