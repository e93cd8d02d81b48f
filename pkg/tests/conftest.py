import pytest

from hdc_ifd import data, substitute as sub

_ACCEPTANCE = []


@pytest.fixture
def acceptance_log():
    def record(name, passed, detail=""):
        _ACCEPTANCE.append((name, passed, detail))
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")


@pytest.fixture(scope="session")
def noisy_normalized():
    train, test = data.synth_pair(train_per_class=96, test_per_class=75, noise_std=0.3, seed=0)
    (train, test), _ = data.normalize(train, test)
    return train, test


@pytest.fixture(scope="session")
def trained_noisy_net(noisy_normalized):
    train, _ = noisy_normalized
    net, hist = sub.train(sub.init_net(sub.NetworkConfig(seed=0)), train.windows, train.labels,
                          sub.TrainConfig(seed=0))
    return net, hist
