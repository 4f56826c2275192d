"""Central finite-difference gradient checking shared by the unit and acceptance tests."""

import numpy as np

STEP = 1e-4
RTOL = 1e-3
# below this magnitude both gradients count as zero
FLOOR = 1e-6


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), FLOOR)


def check(loss_fn, params: dict, grads: dict, names=None, step: float = STEP):
    """Compare ``grads`` to central differences of ``loss_fn()`` for every entry of ``params[name]``.

    ``loss_fn`` must read the arrays in ``params`` in place. Returns
    ``(checked, worst, failures)``.
    """
    checked, worst, failures = 0, 0.0, []
    for name in names or sorted(grads):
        arr = params[name]
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + step
            up = loss_fn()
            arr[idx] = old - step
            down = loss_fn()
            arr[idx] = old
            numeric = (up - down) / (2 * step)
            err = relative_error(float(grads[name][idx]), numeric)
            worst = max(worst, err)
            checked += 1
            if err > RTOL:
                failures.append((name, idx, float(grads[name][idx]), numeric))
    return checked, worst, failures
