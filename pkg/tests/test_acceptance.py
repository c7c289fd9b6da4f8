"""Acceptance criteria 1-11, each checked at its stated tolerance.

Every test records one ``PASS``/``FAIL`` line; pytest prints them in the
terminal summary, and running this file directly prints them as it goes.
"""

import time

import numpy as np
from threadpoolctl import threadpool_limits

from conftest import ACCEPTANCE_LINES
from flowforge import gradcheck, io
from flowforge.cli import main
from flowforge.config import EngineConfig, Stubs
from flowforge.correlation import CorrelationVolume, build_volume, lookup, non_prior_init
from flowforge.grid import identity_grid, lattice, resize_field
from flowforge.losses import GeometricTransform, SeededExtractor, default_loss_resolutions, equivariance_loss
from flowforge.losses import perceptual_loss, total_loss
from flowforge.pipeline import Engine
from flowforge.prior import FileProvider, KeypointSet, PriorMotionOutput, SeededNetProvider, compose_dense_flow, part_flow
from flowforge.prior import softmax_mask
from flowforge.refinement import ZeroUpdater, iterate_refinement, resolution_schedule
from oracles import lookup_naive


def record(n, title, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {title} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_01_lookup_oracle():
    rng = np.random.default_rng(1)
    worst, spent = 0.0, 0.0
    for case in range(200):
        r = (0, 1, 3)[case % 3]
        levels = case // 3 % 2
        h, w = 2 * rng.integers(1, 5, size=2)
        vol = build_volume(rng.normal(size=(h, w, 4)), rng.normal(size=(h, w, 4)), levels)
        hi, wi = rng.integers(1, 9, size=2)
        flow = rng.uniform(-1.2, 1.2, size=(hi, wi, 2))
        t = time.perf_counter()
        got = lookup(vol, flow, r)
        spent += time.perf_counter() - t
        worst = max(worst, float(np.abs(got - lookup_naive(vol.base, flow, r, levels)).max()))
    record(1, "lookup matches nested-loop gather", worst <= 1e-6 and spent < 10,
           f"200 cases, max err {worst:.2e} <= 1e-6, lookup time {spent:.2f}s < 10s")


def test_02_gradient_fidelity():
    t = time.perf_counter()
    reports = gradcheck.run_all(cases=50, seed=0)
    spent = time.perf_counter() - t
    ok = all(r.passed for r in reports) and spent < 10
    detail = "; ".join(f"{r.name} rel err {r.max_rel_error:.2e}" for r in reports)
    record(2, "analytic derivatives match central differences", ok, f"{detail}; tol 1e-4; {spent:.2f}s < 10s")


def test_03_schedule_constants():
    full = resolution_schedule((256, 256))
    ok = full == [(8 * 2**i, 8 * 2**i) for i in range(6)]
    caps = {n: resolution_schedule((256, 256), n)[-1] for n in (3, 4, 5)}
    ok &= caps == {3: (32, 32), 4: (64, 64), 5: (128, 128)}
    record(3, "resolution schedule", ok, f"full {[s[0] for s in full]}, caps {caps}")


def test_04_zero_update_invariant():
    rng = np.random.default_rng(4)
    exact = 0
    for _ in range(20):
        h = 64
        prior_flow = identity_grid(h, h) + rng.normal(scale=0.1, size=(h, h, 2))
        prior = PriorMotionOutput(prior_flow, rng.normal(size=(h, h)))
        vol = build_volume(rng.normal(size=(h, h, 2)), rng.normal(size=(h, h, 2)), 1)
        pyramid = [np.zeros(res + (1,)) for res in resolution_schedule((4 * h, 4 * h))]
        states = list(iterate_refinement(prior, vol, pyramid, ZeroUpdater(), 1))
        exact += len(states) == 6 and all(np.array_equal(s.flow, resize_field(prior_flow, s.resolution)) for s in states)
    record(4, "zero updater keeps the resized prior", exact == 20, f"{exact}/20 priors bit-exact over 6 iterations")


def test_05_prior_algebra():
    rng = np.random.default_rng(5)
    worst_rt, onehot_ok, envelope_ok = 0.0, True, True
    for _ in range(100):
        K = int(rng.integers(1, 6))

        def kp():
            return KeypointSet(rng.uniform(-0.9, 0.9, size=(K, 2)), np.eye(2) + rng.uniform(-0.4, 0.4, size=(K, 2, 2)))

        a, b = kp(), kp()
        grid = identity_grid(6, 6)
        k = int(rng.integers(1, K + 1))
        worst_rt = max(worst_rt, float(np.abs(part_flow(b, a, k, part_flow(a, b, k, grid)) - grid).max()))
        flows = [grid] + [part_flow(a, b, j, grid) for j in range(1, K + 1)]
        sel = int(rng.integers(0, K + 1))
        mask = np.zeros((6, 6, K + 1))
        mask[..., sel] = 1.0
        onehot_ok &= np.array_equal(compose_dense_flow(flows, mask), flows[sel])
        out = compose_dense_flow(flows, softmax_mask(rng.normal(scale=3, size=(6, 6, K + 1))))
        stack = np.stack(flows)
        envelope_ok &= bool(np.all(out <= stack.max(0) + 1e-12) and np.all(out >= stack.min(0) - 1e-12))
    ok = worst_rt <= 1e-10 and onehot_ok and envelope_ok
    record(5, "part-flow and mask algebra", ok,
           f"100 cases, round-trip err {worst_rt:.1e} <= 1e-10, one-hot exact {onehot_ok}, envelope {envelope_ok}")


def test_06_softmax_readout():
    const = non_prior_init(CorrelationVolume((np.full((4, 4, 4, 4), 2.5),)))
    e_const = float(np.abs(const).max())
    rng = np.random.default_rng(6)
    base = rng.uniform(-1, 1, size=(4, 4, 4, 4))
    base[2, 1, 3, 0] += 1000.0
    e_spike = float(np.abs(non_prior_init(CorrelationVolume((base,)))[2, 1] - lattice(4, 4)[3, 0]).max())
    two = np.zeros((2, 1, 2, 1))
    two[:, 0, :, 0] = [0.0, np.log(3.0)]
    out = non_prior_init(CorrelationVolume((two,)))
    # softmax(0, ln 3) = (1/4, 3/4) over y = -1, +1
    e_two = float(np.abs(out - np.array([0.0, 0.5])).max())
    ok = e_const <= 1e-12 and e_spike <= 1e-6 and e_two <= 1e-9
    record(6, "softmax readout saturation and symmetry", ok,
           f"constant {e_const:.1e} <= 1e-12, spike {e_spike:.1e} <= 1e-6, two-entry {e_two:.1e} <= 1e-9")


def _identity_engine():
    kp = KeypointSet.identity([[-0.3, -0.3], [0.3, 0.1], [0.0, 0.4]])
    cfg = EngineConfig(num_keypoints=3, stubs=Stubs(updater=True, image_encoder=True, decoder=True, full_visibility=True))
    return Engine(cfg, provider=FileProvider(kp, kp))


def test_07_identity_end_to_end():
    rng = np.random.default_rng(7)
    errs = {}
    for H in (64, 256):
        src = rng.uniform(size=(H, H, 3))
        errs[H] = float(np.abs(_identity_engine().animate(src, src).image - src).max())
    ok = all(e <= 1e-6 for e in errs.values())
    record(7, "identity animation reproduces source", ok, ", ".join(f"{H}x{H} max err {e:.1e}" for H, e in errs.items()))


class _BlobDetector:
    def detect(self, image, role="driving"):
        h, w, c = image.shape
        wts = image.reshape(-1, c, 1)
        return KeypointSet.identity((wts * lattice(h, w).reshape(-1, 1, 2)).sum(0) / wts.sum(0))


def test_08_loss_identities():
    rng = np.random.default_rng(8)
    x, y = rng.uniform(size=(2, 64, 64, 3))
    ex = SeededExtractor(0)
    p0 = perceptual_loss(x, x, ex, default_loss_resolutions((64, 64)))
    e0 = equivariance_loss(SeededNetProvider(10, seed=0), x, GeometricTransform.identity())
    rep = total_loss(x, y, SeededNetProvider(10, seed=0), ex, seed=3)
    g = lattice(64, 64)
    blobs = np.stack([np.exp(-((g - c) ** 2).sum(-1) / (2 * 0.08**2)) for c in [(-0.2, 0.1), (0.2, -0.15), (0.05, 0.3)]], -1)
    worst = max(
        equivariance_loss(_BlobDetector(), blobs, GeometricTransform.translation(dx, dy))
        for dx, dy in [(0.1, 0.0), (0.0, -0.12), (-0.07, 0.05)]
    )
    ok = p0 == 0.0 and e0 == 0.0 and rep.total == rep.perceptual + rep.equivariance and worst < 1e-3
    record(8, "loss identities", ok,
           f"perceptual(x,x)={p0}, equivariance(identity)={e0}, total==sum {rep.total == rep.perceptual + rep.equivariance}, "
           f"translation equivariance {worst:.1e} < 1e-3")


def test_09_determinism(tmp_path):
    rng = np.random.default_rng(9)
    io.write_image(rng.uniform(size=(64, 64, 3)), tmp_path / "src.png")
    io.write_image(rng.uniform(size=(64, 64, 3)), tmp_path / "drv.png")
    outs = []
    for run in ("a", "b"):
        code = main(["animate", "--source", str(tmp_path / "src.png"), "--driving", str(tmp_path / "drv.png"),
                     "--out-dir", str(tmp_path / run), "--save-flows"])
        assert code == 0
        outs.append({p.name: p.read_bytes() for p in sorted((tmp_path / run).iterdir())})
    ok = outs[0] == outs[1] and len(outs[0]) == 7
    record(9, "animate is byte-deterministic", ok, f"{len(outs[0])} files compared")


def test_10_performance():
    rng = np.random.default_rng(10)
    cfg = EngineConfig(num_keypoints=10, radius=3, pyramid_levels=1)
    times = {}
    with threadpool_limits(limits=1):
        for H in (64, 256):
            src, drv = rng.uniform(size=(2, H, H, 3))
            best = float("inf")
            for _ in range(2):
                t = time.perf_counter()
                Engine(cfg).animate(src, drv)
                best = min(best, time.perf_counter() - t)
            times[H] = best
    ok = times[256] < 5.0 and times[64] < 1.0
    record(10, "single-thread performance", ok, f"256x256 {times[256]:.2f}s < 5s, 64x64 {times[64]:.2f}s < 1s (best of 2)")


def test_11_format_round_trips(tmp_path):
    rng = np.random.default_rng(11)
    flow = identity_grid(16, 16) + rng.normal(scale=0.1, size=(16, 16, 2))
    io.write_flow(flow, tmp_path / "f.flo")
    e_flow = float(np.abs(io.read_flow(tmp_path / "f.flo") - flow).max())
    vol = build_volume(rng.normal(size=(8, 8, 4)), rng.normal(size=(8, 8, 4)) / 4, 1)
    io.write_volume(vol, tmp_path / "v.bin")
    back = io.read_volume(tmp_path / "v.bin")
    e_vol = max(float(np.abs(a - b).max()) for a, b in zip(vol.levels, back.levels))
    io.write_flow(np.zeros((1, 1, 2)), tmp_path / "one.flo")
    size = (tmp_path / "one.flo").stat().st_size
    ok = e_flow <= 1e-6 and e_vol <= 1e-6 and size == 20
    record(11, "file format round-trips", ok, f"flow err {e_flow:.1e}, volume err {e_vol:.1e} (<= 1e-6), 1x1 flow {size} bytes")


if __name__ == "__main__":
    import sys
    import tempfile
    from pathlib import Path

    failed = 0
    for name, fn in sorted(globals().items()):
        if name.startswith("test_"):
            try:
                if "tmp_path" in fn.__code__.co_varnames[: fn.__code__.co_argcount]:
                    with tempfile.TemporaryDirectory() as d:
                        fn(Path(d))
                else:
                    fn()
            except AssertionError:
                failed += 1
    sys.exit(1 if failed else 0)
