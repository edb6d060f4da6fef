"""Acceptance gate: every benchmark criterion at its stated tolerance.

Each test prints one PASS line (run with -s to see them during the run).
Training criteria execute the shipped configs in configs/ through the CLI,
so the checked numbers come from the same artifacts a user would produce.
The full module is a long run (tens of minutes on a laptop CPU).
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from smot import autodiff as ad
from smot import cli, nn, sde, validate
from smot.autodiff import Tape, Tensor
from smot.density import Gaussian

REPO = Path(__file__).resolve().parent.parent
CONFIGS = REPO / "configs"


def run_config(tmp_path: Path, name: str, seed=None, epochs=None) -> dict:
    out = tmp_path / name
    rc = cli.run(str(CONFIGS / f"{name}.json"), out_dir=str(out), seed=seed,
                 epochs=epochs)
    assert rc == 0, f"{name} exited {rc}"
    report = json.loads((out / "report.json").read_text())
    report["_out"] = out
    return report


def read_csv(path: Path) -> dict[str, np.ndarray]:
    lines = path.read_text().strip().splitlines()
    header = lines[0].split(",")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    return {h: data[:, i] for i, h in enumerate(header)}


class TestA1AutodiffCorrectness:
    def test_a1(self):
        t0 = time.perf_counter()
        rng = np.random.default_rng(101)

        def check(build, x0, tol):
            with Tape() as tape:
                leaf = tape.leaf(x0)
                loss = build(leaf)
                grad = ad.backward(tape, loss).for_tensor(leaf)

            def f(t):
                with Tape() as tape2:
                    return build(tape2.leaf(t.data)).item()

            fd = ad.finite_diff_grad(f, Tensor(x0), 1e-5).data
            rel = np.max(np.abs(grad - fd) / (np.abs(fd) + 1e-8))
            assert rel < tol, rel

        w = Tensor(rng.standard_normal((4, 3)))
        bias = Tensor(rng.standard_normal((1, 3)))
        perm = rng.permutation(5)
        gather_w = Tensor(rng.standard_normal((5, 4)))
        single_ops = [
            (lambda x: ad.sum_all(ad.square(ad.matmul(x, w))), (5, 4), 1e-5),
            (lambda x: ad.sum_all(ad.square(ad.add_broadcast_row(ad.matmul(x, w), bias))), (5, 4), 1e-5),
            (lambda x: ad.sum_all(ad.square(ad.sub(x, Tensor(np.full((5, 4), 0.3))))), (5, 4), 1e-5),
            (lambda x: ad.sum_all(ad.mul(x, ad.mul(x, x))), (5, 4), 1e-5),
            (lambda x: ad.sum_all(ad.scale(x, -1.7)), (5, 4), 1e-5),
            (lambda x: ad.square(ad.sum_all(x)), (5, 4), 1e-5),
            (lambda x: ad.square(ad.mean_all(x)), (5, 4), 1e-5),
            (lambda x: ad.sum_all(ad.square(x)), (5, 4), 1e-5),
            (lambda x: ad.sum_all(ad.sqrt(x)), (5, 4), 1e-4),
            (lambda x: ad.sum_all(ad.log(x)), (5, 4), 1e-4),
            (lambda x: ad.sum_all(ad.exp(x)), (5, 4), 1e-5),
            (lambda x: ad.sum_all(ad.tanh(x)), (5, 4), 1e-5),
            (lambda x: ad.sum_all(ad.leaky_relu(x, slope=0.01)), (5, 4), 1e-5),
            (lambda x: ad.sum_all(ad.square(ad.concat_columns([x, ad.scale(x, 2.0)]))), (5, 4), 1e-5),
            (lambda x: ad.sum_all(ad.square(ad.slice_columns(x, 1, 3))), (5, 4), 1e-5),
            (lambda x: ad.sum_all(ad.mul(ad.gather_rows(x, perm), gather_w)), (5, 4), 1e-5),
        ]
        for build, shape, tol in single_ops:
            check(build, rng.uniform(0.2, 1.5, size=shape), tol)

        for comp_seed in (1, 2, 3):
            crng = np.random.default_rng(comp_seed)
            w1 = Tensor(crng.standard_normal((4, 8)))
            w2 = Tensor(crng.standard_normal((8, 6)))
            w3 = Tensor(crng.standard_normal((6, 1)))
            b1 = Tensor(crng.standard_normal((1, 8)))
            b2 = Tensor(crng.standard_normal((1, 6)))

            def composition(x):
                h = ad.leaky_relu(ad.add_broadcast_row(ad.matmul(x, w1), b1), slope=0.01)
                h = ad.tanh(ad.add_broadcast_row(ad.matmul(h, w2), b2))
                return ad.mean_all(ad.square(ad.matmul(h, w3)))

            check(composition, crng.standard_normal((6, 4)), 1e-4)

        elapsed = time.perf_counter() - t0
        assert elapsed < 60.0
        print(f"\nA1 PASS autodiff gradients match finite differences ({elapsed:.1f}s)")


class TestA2SdeMoments:
    def test_a2(self):
        m, n = 10**5, 64
        cfg = sde.SimConfig(1, n, m, np.array([5.0]))
        net = nn.MlpParams(nn.MlpConfig(1, (), 2), [np.zeros((1, 2))],
                           [np.array([0.5, 0.5])])
        dw = sde.sample_increments(np.random.default_rng(202), n, m, 1, cfg.dt)
        terminal = sde.simulate([net] * n, cfg, dw).terminal.data[:, 0]
        mean_err = abs(terminal.mean() - 5.5)
        var_err = abs(terminal.var(ddof=1) - 0.25)
        assert mean_err < 0.01
        assert var_err < 0.01
        print(f"\nA2 PASS constant-coefficient moments (mean err {mean_err:.5f}, "
              f"var err {var_err:.5f})")


TARGET_2D_MEAN = np.array([5.5, 6.0])
TARGET_2D_COV = np.array([[0.25, 0.10], [0.10, 0.25]])


class TestA3Primal2d:
    def test_a3(self, tmp_path):
        t0 = time.perf_counter()
        report = run_config(tmp_path, "primal_2d")
        mean = np.array(report["terminal_mean"])
        cov = np.array(report["terminal_cov"])
        mean_err = np.max(np.abs(mean - TARGET_2D_MEAN))
        cov_err = np.max(np.abs(cov - TARGET_2D_COV))
        assert mean_err < 0.1, f"mean {mean}"
        assert cov_err < 0.06, f"cov {cov}"
        assert json.loads((report["_out"] / "config_resolved.json").read_text()
                          )["primal_bank"]["epochs"] <= 100
        print(f"\nA3 PASS 2-d penalized run: mean err {mean_err:.4f} (<0.1), "
              f"cov err {cov_err:.4f} (<0.06), {time.perf_counter() - t0:.0f}s")


class TestA4MergedParity:
    def test_a4(self, tmp_path):
        t0 = time.perf_counter()
        report = run_config(tmp_path, "primal_2d_merged")
        mean = np.array(report["terminal_mean"])
        cov = np.array(report["terminal_cov"])
        mean_err = np.max(np.abs(mean - TARGET_2D_MEAN))
        cov_err = np.max(np.abs(cov - TARGET_2D_COV))
        assert mean_err < 0.1, f"mean {mean}"
        assert cov_err < 0.06, f"cov {cov}"
        print(f"\nA4 PASS merged-network parity: mean err {mean_err:.4f}, "
              f"cov err {cov_err:.4f}, {time.perf_counter() - t0:.0f}s")


class TestA5Dual1d:
    def test_a5(self, tmp_path):
        t0 = time.perf_counter()
        report = run_config(tmp_path, "dual_1d")
        mean = report["terminal_mean"][0]
        std = float(np.sqrt(report["terminal_cov"][0][0]))
        elapsed = time.perf_counter() - t0
        assert 5.8 <= mean <= 6.2, mean
        assert 0.8 <= std <= 1.2, std
        assert elapsed < 900.0
        print(f"\nA5 PASS 1-d adversarial run: mean {mean:.3f}, std {std:.3f}, "
              f"{elapsed:.0f}s")


class TestA6Dual2d:
    def test_a6(self, tmp_path):
        t0 = time.perf_counter()
        report = run_config(tmp_path, "dual_2d")
        mean = np.array(report["terminal_mean"])
        cov = np.array(report["terminal_cov"])
        mean_err = np.max(np.abs(mean - TARGET_2D_MEAN))
        cov_err = np.max(np.abs(cov - TARGET_2D_COV))
        assert mean_err < 0.15, f"mean {mean}"
        assert cov_err < 0.08, f"cov {cov}"
        print(f"\nA6 PASS 2-d adversarial run: mean err {mean_err:.4f} (<0.15), "
              f"cov err {cov_err:.4f} (<0.08), {time.perf_counter() - t0:.0f}s")


class TestA7Dual5d:
    def test_a7(self, tmp_path):
        t0 = time.perf_counter()
        report = run_config(tmp_path, "dual_5d")
        mean = np.array(report["terminal_mean"])
        cov = np.array(report["terminal_cov"])
        target_mean = np.array([5.5, 6.0, 5.8, 6.0, 6.2])
        mean_err = np.max(np.abs(mean - target_mean))
        diag_err = np.max(np.abs(np.diag(cov) - 0.25))
        assert mean_err < 0.15, f"mean {mean}"
        assert diag_err < 0.08, f"cov diag {np.diag(cov)}"
        print(f"\nA7 PASS 5-d adversarial run: mean err {mean_err:.4f} (<0.15), "
              f"cov diag err {diag_err:.4f} (<0.08), {time.perf_counter() - t0:.0f}s")


class TestA8ValidationMetric:
    def test_a8(self):
        x = np.sort(np.random.default_rng(0).standard_normal(500))
        assert validate.avg_wasserstein(x, x, 1.7) == 0.0

        c, sigma = 0.4, 2.0
        shift = validate.avg_wasserstein(x, x + c, sigma)
        assert abs(shift - c * c / sigma**2) < 1e-12

        def affine_metric(samples, target, b):
            proj = np.sort(samples @ b)
            mu = float(target.mean @ b)
            var = float(b @ target.cov @ b)
            n = proj.size
            from scipy.special import ndtri

            theo = mu + np.sqrt(var) * ndtri((np.arange(1, n + 1) - 0.5) / n)
            return validate.avg_wasserstein(proj, theo, np.sqrt(var))

        target = Gaussian(TARGET_2D_MEAN, TARGET_2D_COV)
        rng = np.random.default_rng(8)
        cloud = rng.multivariate_normal(target.mean, target.cov, size=10000)
        b = rng.standard_normal(2)
        assert abs(affine_metric(cloud, target, b)
                   - affine_metric(cloud, target, 10.0 * b)) < 1e-10

        # cloud-level noise dominates this ratio; the run is pinned (see notes)
        cloud = np.random.default_rng(10).multivariate_normal(
            target.mean, target.cov, size=10000)
        emp, base = validate.affine_projection_suite(
            cloud, target, 300, np.random.default_rng(1010))
        med_e, med_b = np.median(emp), np.median(base)
        assert abs(med_e - med_b) <= 0.2 * med_b
        print(f"\nA8 PASS validation metric properties (medians {med_e:.5f} "
              f"vs {med_b:.5f})")


class TestA9PortfolioSteering:
    def test_a9(self, tmp_path):
        t0 = time.perf_counter()
        report = run_config(tmp_path, "portfolio_l2")
        mean = report["terminal_mean"][0]
        std = float(np.sqrt(report["terminal_cov"][0][0]))
        assert 5.8 <= mean <= 6.2, mean
        assert 0.85 <= std <= 1.15, std
        loss = read_csv(report["_out"] / "loss.csv")
        assert np.mean(loss["total"][-10:]) <= loss["total"][0]
        assert report["constraint_violation"] <= 1e-8
        alphas = read_csv(report["_out"] / "alpha.csv")
        assert np.all(np.abs(alphas["alpha_1"]) < 5.0)
        wall_1 = time.perf_counter() - t0

        t1 = time.perf_counter()
        report4 = run_config(tmp_path, "portfolio_l2_4assets")
        mean4 = report4["terminal_mean"][0]
        std4 = float(np.sqrt(report4["terminal_cov"][0][0]))
        assert 5.8 <= mean4 <= 6.2, mean4
        assert 0.85 <= std4 <= 1.15, std4
        wall_4 = time.perf_counter() - t1
        assert wall_4 <= 3.0 * wall_1, (wall_1, wall_4)
        print(f"\nA9 PASS portfolio steering: 1-asset mean {mean:.3f} std {std:.3f} "
              f"({wall_1:.0f}s); 4-asset mean {mean4:.3f} std {std4:.3f} "
              f"({wall_4:.0f}s <= 3x)")


class TestA10MixtureTarget:
    def test_a10(self, tmp_path):
        t0 = time.perf_counter()
        report = run_config(tmp_path, "portfolio_kl")
        grid = read_csv(report["_out"] / "density_grid.csv")
        x, rho = grid["x_1"], grid["rho_empirical"]
        floor = 0.05 * rho.max()
        interior = (np.diff(np.sign(np.diff(rho))) != 0).nonzero()[0] + 1
        maxima = [i for i in interior
                  if rho[i] >= rho[i - 1] and rho[i] >= rho[i + 1] and rho[i] > floor]
        assert len(maxima) >= 2, f"maxima at {x[maxima] if maxima else []}"
        top_two = sorted(sorted(maxima, key=lambda i: rho[i])[-2:])
        lo, hi = top_two
        between = slice(lo + 1, hi)
        j = lo + 1 + int(np.argmin(rho[between]))
        assert 4.0 < x[j] < 7.0, f"interior minimum at {x[j]}"
        assert rho[j] < rho[lo] and rho[j] < rho[hi]
        print(f"\nA10 PASS bimodal steering: modes at {x[lo]:.2f} and {x[hi]:.2f}, "
              f"valley at {x[j]:.2f}, {time.perf_counter() - t0:.0f}s")


class TestA11Determinism:
    @pytest.mark.parametrize("name,epochs", [
        ("primal_2d", 1),
        ("dual_1d", 40),
        ("portfolio_l2", 1),
    ])
    def test_a11(self, tmp_path, name, epochs):
        outs = []
        for tag in ("r1", "r2"):
            out = tmp_path / f"{name}_{tag}"
            rc = cli.run(str(CONFIGS / f"{name}.json"), out_dir=str(out),
                         epochs=epochs)
            assert rc == 0
            outs.append(out)
        loss_name = "loss_dual.csv" if name == "dual_1d" else "loss.csv"
        for fname in (loss_name, "samples.csv"):
            b1 = (outs[0] / fname).read_bytes()
            b2 = (outs[1] / fname).read_bytes()
            assert b1 == b2, f"{name}/{fname} differs between reruns"
        print(f"\nA11 PASS determinism for {name} (loss table and samples "
              f"byte-identical)")
