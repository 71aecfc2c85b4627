"""Built-in verification suite: gradient checks against central differences,
alignment-weight oracles, and EER equivalence against a naive sweep.

Each check prints one ok/FAIL line; the suite passes iff every check passes.
The `tamper` hook flips the sign of one named analytic gradient so the
harness itself can be shown to catch a planted bug.
"""

from __future__ import annotations

import numpy as np

from .encoder import EncoderParams, Utterance, encode, encoder_gradients, init_encoder_params
from .margin_head import (
    MODE_SEPARATE,
    HeadBank,
    MarginConfig,
    bank_from_vector,
    bank_to_vector,
    make_gt_heads,
    margin_loss,
)
from .numerics import RngStream, grad_check, substream
from .objective import (
    SCHEME_HW,
    SCHEME_PLAIN_MRL,
    SCHEME_SW,
    alignment_weights,
    band_boundaries,
)
from .specs import DurationSet, PrefixSpec
from .synthdata import Instance, InstanceBatch
from .trainer import BatchGrads, batch_loss_and_grads

TAMPER_TARGETS = ("margin_loss", "encoder", "dame_objective")


def _flatten_batch_grads(grads: BatchGrads, mode: str) -> np.ndarray:
    parts = [grads.w1.ravel(), grads.b1, grads.w2.ravel(), grads.b2]
    if mode == MODE_SEPARATE:
        parts += [g.ravel() for g in grads.heads]
    else:
        parts.append(np.asarray(grads.heads).ravel())
    return np.concatenate(parts)


def check_quadratic(tol: float) -> tuple[bool, float]:
    """Quadratics are exact under central differences up to rounding."""
    worst = 0.0
    rep = grad_check(lambda v: float(v[0] ** 2), np.array([3.0]), np.array([6.0]), tol=tol)
    worst = max(worst, rep.max_relative_error)
    ok = rep.passed
    x = np.array([1.0, 2.0])
    rep = grad_check(lambda v: float(v @ v), x, 2 * x, tol=tol)
    worst = max(worst, rep.max_relative_error)
    return ok and rep.passed, worst


def check_margin_loss_gradients(
    probes: int, tol: float, tamper: bool = False
) -> tuple[bool, float]:
    d, num_classes = 16, 8
    spec = PrefixSpec((d,))
    cfg = MarginConfig(30.0, {d: 0.2})
    worst = 0.0
    for probe in range(probes):
        rng = substream(911, "selftest-margin", probe)
        z = rng.normal(size=d)
        w = rng.normal(size=(d, num_classes))
        y = int(rng.integers(num_classes))

        def f(vec: np.ndarray) -> float:
            bank = HeadBank(
                MODE_SEPARATE, spec, num_classes,
                separate_weights=[vec[d:].reshape(d, num_classes).copy()],
            )
            loss, _, _ = margin_loss(vec[:d], bank, 0, y, cfg)
            return loss

        bank = HeadBank(MODE_SEPARATE, spec, num_classes, separate_weights=[w])
        _, grad_z, grad_w = margin_loss(z, bank, 0, y, cfg)
        analytic = np.concatenate([grad_z, grad_w.ravel()])
        if tamper:
            analytic = -analytic
        rep = grad_check(f, np.concatenate([z, w.ravel()]), analytic, tol=tol)
        worst = max(worst, rep.max_relative_error)
        if not rep.passed:
            return False, worst
    return True, worst


def check_encoder_gradients(
    probes: int, tol: float, tamper: bool = False
) -> tuple[bool, float]:
    feat, hidden, embed, frames = 6, 5, 8, 7
    worst = 0.0
    for probe in range(probes):
        rng = substream(912, "selftest-encoder", probe)
        params = init_encoder_params(feat, hidden, embed, rng)
        u = Utterance(rng.normal(size=(frames, feat)), speaker_id=0, source_id="probe")
        direction = rng.normal(size=embed)

        def f(vec: np.ndarray) -> float:
            p = EncoderParams.from_vector(vec, feat, hidden, embed)
            return float(encode(u, p) @ direction)

        analytic = encoder_gradients(u, params, direction).to_vector()
        if tamper:
            analytic = -analytic
        rep = grad_check(f, params.to_vector(), analytic, tol=tol)
        worst = max(worst, rep.max_relative_error)
        if not rep.passed:
            return False, worst
    return True, worst


def check_dame_objective_gradients(
    probes: int, tol: float, tamper: bool = False
) -> tuple[bool, float]:
    """Full composed loss: encoder -> prefixes -> margin heads -> aggregation."""
    feat, hidden = 6, 5
    spec = PrefixSpec((2, 4, 6, 8))
    durations = DurationSet((1.0, 2.0))
    num_classes = 5
    worst = 0.0
    enc_size = feat * hidden + hidden + hidden * spec.full_dim + spec.full_dim
    for probe in range(probes):
        rng = substream(913, "selftest-objective", probe)
        params = init_encoder_params(feat, hidden, spec.full_dim, rng)
        bank = make_gt_heads(spec, num_classes, RngStream(0, gen=substream(913, "heads", probe)))
        # alternate the banded and uniform weighting paths across probes
        scheme = SCHEME_SW if probe % 2 == 0 else SCHEME_PLAIN_MRL
        w = alignment_weights(scheme, 2, 4)
        alpha = 0.7
        margins = [[0.0, 0.1, 0.2, 0.2], [0.0, 0.1, 0.2, 0.2]]
        chunk_frames = durations.frames(4)
        instances = []
        for i in range(2):
            chunks = tuple(
                Utterance(rng.normal(size=(nf, feat)), speaker_id=i, source_id=f"p{i}")
                for nf in chunk_frames
            )
            instances.append(Instance(speaker_id=i, chunks=chunks))
        batch = InstanceBatch(instances=tuple(instances))

        def f(vec: np.ndarray) -> float:
            enc = EncoderParams.from_vector(vec[:enc_size], feat, hidden, spec.full_dim)
            b = bank_from_vector(vec[enc_size:], MODE_SEPARATE, spec, num_classes)
            loss, _ = batch_loss_and_grads(enc, b, batch, w, alpha, margins, 30.0)
            return loss

        _, grads = batch_loss_and_grads(params, bank, batch, w, alpha, margins, 30.0)
        analytic = _flatten_batch_grads(grads, MODE_SEPARATE)
        if tamper:
            analytic = -analytic
        x0 = np.concatenate([params.to_vector(), bank_to_vector(bank)])
        rep = grad_check(f, x0, analytic, tol=tol)
        worst = max(worst, rep.max_relative_error)
        if not rep.passed:
            return False, worst
    return True, worst


def check_alignment_weights() -> bool:
    hw = alignment_weights(SCHEME_HW, 3, 3)
    if not np.array_equal(hw.c, np.eye(3)):
        return False
    sw = alignment_weights(SCHEME_SW, 2, 4)
    expected = np.array([[1.0, 1.0, 0.25, 0.5], [0.0625, 0.125, 1.0, 1.0]])
    if not np.array_equal(sw.c, expected):
        return False
    mrl = alignment_weights(SCHEME_PLAIN_MRL, 2, 4)
    if not np.array_equal(mrl.c, np.ones((2, 4))):
        return False
    for k_count in range(1, 513):
        for j_count in range(1, k_count + 1):
            b = band_boundaries(j_count, k_count)
            if b[0] != 0 or b[-1] != k_count:
                return False
            sizes = np.diff(b)
            if sizes.sum() != k_count or np.any(sizes < 0):
                return False
    return True


def _eer_naive(targets, nontargets) -> float:
    """Literal O(n^2) threshold enumeration with the same tie and
    interpolation conventions as the production path."""
    thresholds = sorted(set(targets) | set(nontargets))
    thresholds.append(thresholds[-1] + 1.0)
    prev_far = prev_frr = None
    for t in thresholds:
        frr = sum(1 for s in targets if s < t) / len(targets)
        far = sum(1 for s in nontargets if s >= t) / len(nontargets)
        diff = far - frr
        if diff <= 0.0:
            if diff == 0.0:
                return frr
            prev_diff = prev_far - prev_frr
            lam = prev_diff / (prev_diff - diff)
            return prev_frr + lam * (frr - prev_frr)
        prev_far, prev_frr = far, frr
    raise AssertionError("no crossing found")


def check_eer_oracle(num_sets: int = 200) -> bool:
    from .evaluation import ScoreSet, compute_eer

    rng = substream(914, "selftest-eer")
    for idx in range(num_sets):
        n_t = int(rng.integers(1, 101))
        n_n = int(rng.integers(1, 101))
        if idx % 2 == 0:
            tgt = rng.uniform(-1, 1, size=n_t)
            non = rng.uniform(-1, 1, size=n_n)
        else:
            tgt = np.round(rng.uniform(-1, 1, size=n_t), 1)
            non = np.round(rng.uniform(-1, 1, size=n_n), 1)
        fast = compute_eer(ScoreSet(tgt, non))
        naive = _eer_naive(list(tgt), list(non))
        if fast != naive:
            return False
        # monotone-transform invariance
        a = float(rng.uniform(0.1, 3.0))
        b = float(rng.uniform(-2.0, 2.0))
        affine = compute_eer(ScoreSet(a * tgt + b, a * non + b))
        cubic = compute_eer(ScoreSet(tgt**3 + tgt, non**3 + non))
        if affine != fast or cubic != fast:
            return False
    return True


def run_selftest(
    tolerance: float = 1e-5, probes: int = 20, tamper: str | None = None
) -> tuple[bool, list[str]]:
    if tamper is not None and tamper not in TAMPER_TARGETS:
        raise ValueError(f"unknown tamper target {tamper!r}")
    lines = []
    all_ok = True

    ok, worst = check_quadratic(tolerance)
    lines.append(_report("gradcheck-quadratic", ok, f"max rel err {worst:.3e}"))
    all_ok &= ok

    ok, worst = check_margin_loss_gradients(probes, tolerance, tamper == "margin_loss")
    lines.append(_report("gradcheck-margin_loss", ok, f"max rel err {worst:.3e}"))
    all_ok &= ok

    ok, worst = check_encoder_gradients(probes, tolerance, tamper == "encoder")
    lines.append(_report("gradcheck-encoder", ok, f"max rel err {worst:.3e}"))
    all_ok &= ok

    ok, worst = check_dame_objective_gradients(probes, tolerance, tamper == "dame_objective")
    lines.append(_report("gradcheck-dame_objective", ok, f"max rel err {worst:.3e}"))
    all_ok &= ok

    ok = check_alignment_weights()
    lines.append(_report("alignment-weights-oracle", ok, "HW/SW/bands"))
    all_ok &= ok

    ok = check_eer_oracle()
    lines.append(_report("eer-oracle-equivalence", ok, "naive sweep + monotone transforms"))
    all_ok &= ok

    return bool(all_ok), lines


def _report(name: str, ok: bool, detail: str) -> str:
    status = "ok" if ok else "FAIL"
    return f"{status:4s} {name} ({detail})"
