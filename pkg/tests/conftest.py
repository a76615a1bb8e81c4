import numpy as np
import pytest

from attencopt.instance import Instance


def make_instance(
    I=1,
    T=3,
    M=1,
    J=1,
    S=1,
    maint_cost=None,
    failure_cost=0.0,
    visit_cost=0.0,
    location_of=None,
    price=None,
    max_production=None,
    failure_time=None,
):
    """Hand-built instance; unspecified arrays are zeros / no failure / location 1."""
    return Instance(
        n_turbines=I,
        n_periods=T,
        capacity=M,
        n_locations=J,
        n_scenarios=S,
        maint_cost=np.zeros((I, T)) if maint_cost is None else maint_cost,
        failure_cost=failure_cost,
        visit_cost=visit_cost,
        location_of=np.ones(I, dtype=int) if location_of is None else location_of,
        price=np.zeros((S, T)) if price is None else price,
        max_production=np.zeros((S, I, T)) if max_production is None else max_production,
        failure_time=np.full((S, I), T + 1) if failure_time is None else failure_time,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def surrogate_gradient_error(model, batch, actions, advantage, eps=1e-5):
    """Relative error of the full autodiff gradient vs central differences.

    Returns (global, per_parameter): the global figure is
    ||g_auto - g_fd|| / max(||g_auto||, ||g_fd||) over all parameters at once;
    per-parameter entries use the same formula on each tensor. The loss is
    mean((L - b) * log p(actions)) with the actions held fixed, so it is a
    smooth function of the parameters.
    """
    from attencopt.trainer import surrogate_loss

    def loss_value():
        return float(surrogate_loss(model.run(batch, actions=actions).log_prob, advantage).data)

    model.store.zero_grad()
    surrogate_loss(model.run(batch, actions=actions).log_prob, advantage).backward()
    analytic = {name: g.copy() for name, g in model.store.grads().items()}
    numeric = {}
    for name, p in model.store:
        flat = p.data.reshape(-1)
        num = np.zeros_like(flat)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + eps
            hi = loss_value()
            flat[j] = old - eps
            lo = loss_value()
            flat[j] = old
            num[j] = (hi - lo) / (2 * eps)
        numeric[name] = num

    def rel(a, n):
        return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), 1e-300))

    per = {name: rel(analytic[name].reshape(-1), numeric[name]) for name in numeric}
    a_all = np.concatenate([analytic[n].reshape(-1) for n in numeric])
    n_all = np.concatenate(list(numeric.values()))
    return rel(a_all, n_all), per


ACCEPTANCE_LINES = []


def acceptance_line(number, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2}: {title} -- {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
