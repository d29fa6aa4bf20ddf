"""Shared fixtures and the per-criterion acceptance summary."""

from __future__ import annotations

import pytest

from tslm.autoencoder import Autoencoder, AutoencoderConfig
from tslm.datagen import PATTERNS, caption_templates
from tslm.encoder import EncoderConfig
from tslm.textrep import build_vocab

# criterion number -> [title, passed so far, detail lines]
_ACCEPTANCE: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or report.when != "call":
        return
    number, title = marker.args
    entry = _ACCEPTANCE.setdefault(number, [title, True, []])
    entry[1] = entry[1] and report.passed
    entry[2].extend(getattr(item, "acceptance_details", []))


@pytest.fixture
def detail(request):
    """Call ``detail("...")`` to attach a measurement to the acceptance summary line."""
    lines = request.node.acceptance_details = []
    return lines.append


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, passed, lines = _ACCEPTANCE[number]
        extra = f" ({'; '.join(lines)})" if lines else ""
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number:>2}. {title}{extra}")


# ----------------------------------------------------------------------
# tiny models
# ----------------------------------------------------------------------
def template_corpus() -> list[str]:
    return [c for p in PATTERNS for c in caption_templates(p)]


@pytest.fixture(scope="session")
def vocab():
    return build_vocab(template_corpus())


@pytest.fixture
def tiny_ae():
    return Autoencoder(AutoencoderConfig(d=16, l_max=24, channels=(8, 4, 4, 8), seed=3))


def tiny_encoder_config(vocab, variant="joint", seed=0, d=16, layers=1) -> EncoderConfig:
    return EncoderConfig(vocab_size=len(vocab), d=d, heads=2, prototypes=8, layers=layers, f=6, variant=variant, seed=seed)
