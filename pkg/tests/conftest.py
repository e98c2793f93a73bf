import pytest

from unifiedvl import VocabConfig, build_vocab

SMALL = VocabConfig(text_vocab_size=256, image_codebook_size=32, coords_per_axis=64, depth_bins=16)


@pytest.fixture(scope="session")
def vocab():
    return build_vocab()


@pytest.fixture(scope="session")
def small_vocab():
    return build_vocab(SMALL)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
