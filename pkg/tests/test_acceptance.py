"""
End-to-end training runs on the built-in environments.

These take minutes (integrator) to about an hour (pursuit) on a desktop CPU
and are deselected by default; run with ``pytest -m slow``.
"""

from pathlib import Path

import numpy as np
import pytest

from src.models.schemas import Algorithm
from src.services.atppo import evaluate, evaluate_png, train
from src.services.config_parser import parse_config
from src.utils.helpers import make_env

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

pytestmark = pytest.mark.slow


def _train_and_eval(conf: str, seed: int, algorithm: Algorithm = Algorithm.ATPPO, episodes: int = 100):
    config = parse_config(CONFIGS / conf, {"seed": seed, "algorithm": algorithm.value})
    ckpt, _ = train(config)
    env = make_env(config.env, config.env_config())
    return evaluate(ckpt, env, episodes, seed=1000 + seed)


class TestIntegratorAcceptance:
    @pytest.fixture(scope="class")
    def reports(self):
        return {seed: _train_and_eval("integrator.conf", seed) for seed in (0, 1, 2)}

    def test_stabilises(self, reports):
        for report in reports.values():
            final = [abs(float(ep.terminal_state[0])) for ep in report.episodes]
            assert np.mean([x <= 0.5 for x in final]) >= 0.9

    def test_lyapunov_decays(self, reports):
        window = int(round(2.0 / reports[0].dt))
        for report in reports.values():
            v = report.traces[0].lyapunov
            assert np.all(v[window:] <= v[:-window] + 0.2)

    def test_resource_saving(self, reports):
        fractions = [r.comm_fraction for r in reports.values()]
        assert all(f <= 0.5 for f in fractions)
        assert min(fractions) <= 0.2

    def test_zeno_free(self, reports):
        for report in reports.values():
            assert report.min_inter_event >= report.dt - 1e-12

    def test_ppo_comparator_always_communicates(self):
        report = _train_and_eval("integrator.conf", 0, Algorithm.PPO, episodes=10)
        assert report.comm_fraction == 1.0


class TestPursuitAcceptance:
    def test_png_captures_nominal(self):
        config = parse_config(CONFIGS / "pursuit.conf", {"env.heading_spread_deg": 0})
        report = evaluate_png(make_env(config.env, config.env_config()), episodes=1)
        assert report.capture_rate == 1.0

    def test_atppo_captures_with_less_communication(self):
        atppo_report = _train_and_eval("pursuit.conf", 0)
        ppo_report = _train_and_eval("pursuit.conf", 0, Algorithm.PPO)
        assert atppo_report.capture_rate >= 0.8
        assert atppo_report.comm_fraction < ppo_report.comm_fraction
        assert atppo_report.min_inter_event >= atppo_report.dt - 1e-12
