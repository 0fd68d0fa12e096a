import pytest

from mabuchi_action_lab.core.errors import ConfigError
from mabuchi_action_lab.core.models import ExperimentConfig
from mabuchi_action_lab.suites import SUITES, SuiteContext, resolve_suites, run_suites


@pytest.fixture
def config():
    return ExperimentConfig.model_validate(
        {
            "name": "suite-test",
            "grid": {"n": 8},
            "fixture": {"preset": "constants"},
            "lagrangian": {"spec": "power:p1", "extra": ["orlicz:p2"]},
            "geodesic": {
                "time_steps": 4,
                "epsilon_initial": 0.5,
                "continuation_tol": 1e-4,
            },
            "verification": {"seeds": [3], "count": 3, "sequence_length": 3},
        }
    )


def test_context_parses_every_lagrangian(config):
    ctx = SuiteContext.from_config(config)
    assert [s.describe() for s in ctx.specs] == ["power:p1", "orlicz:p2"]
    assert ctx.T == 1.0
    assert len(ctx.decreasing_sequence(ctx.w)) == 3


def test_bad_extra_lagrangian_names_its_field(config):
    broken = config.model_copy(
        update={"lagrangian": config.lagrangian.model_copy(update={"extra": ["x:1"]})}
    )
    with pytest.raises(ConfigError) as info:
        SuiteContext.from_config(broken)
    assert info.value.field == "lagrangian.extra.0"


def test_direction_keeps_perturbations_admissible(config):
    ctx = SuiteContext.from_config(config)
    direction = ctx.direction(0)
    assert (1.0 + 0.5 * ctx.grid.laplacian(direction)).min() > 0.0


def test_resolve_suites():
    assert resolve_suites(["noether", "continuity", "noether"]) == [
        "noether",
        "continuity",
    ]
    with pytest.raises(ConfigError):
        resolve_suites(["bogus"])
    with pytest.raises(ConfigError):
        resolve_suites([])
    assert set(SUITES) >= {"least_action", "composition", "monotone_limits"}


@pytest.mark.parametrize("name", ["monotone_limits", "continuity", "action_convexity"])
def test_suites_on_constant_endpoints(config, name):
    ctx = SuiteContext.from_config(config)
    [(ran, reports)] = run_suites(ctx, [name])
    assert ran == name
    assert reports
    assert any(r.expect_failure for r in reports)
    assert all(r.outcome_ok for r in reports)
