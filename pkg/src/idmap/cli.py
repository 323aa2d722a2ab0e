"""Command-line driver: ``idmap <command> [options]``.

Exit codes: 0 success, 2 usage or invalid parameters, 3 data validation or
missing files, 4 numerical failure.
"""

from __future__ import annotations

import csv
import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import manifolds
from .core import (DataValidationError, DiffusionEmbedding, FeatureSet, IdmError,
                   NumericalError, ParameterError, PointCloud, load_embedding, load_features,
                   load_point_cloud, read_matrix, save_embedding, save_features,
                   save_point_cloud, write_matrix)

log = logging.getLogger("idmap")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 2, 3, 4

DEFAULTS = {"k": 500, "k2": 32, "L": 100, "modes": 250, "mode": "simple", "seed": 0,
            "tau": 0.5, "iters": 4, "s_factor": 5.0}


class ArtifactMissing(DataValidationError):
    pass


# ---------------------------------------------------------------------------
# helpers

def _write_rows(path, header, rows):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                        for v in row])


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_config(path):
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ArtifactMissing(f"cannot read config {path}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataValidationError(f"{path}: invalid JSON at line {exc.lineno}") from exc
    if not isinstance(cfg, dict):
        raise DataValidationError(f"{path}: config must be a JSON object")
    return cfg


def _merge(ctx_obj, **flags):
    """Config values overridden by explicitly given flags, over defaults."""
    cfg = dict(DEFAULTS)
    cfg.update(ctx_obj.get("config", {}))
    for key, value in flags.items():
        if value is not None:
            cfg[key] = value
    for key in ("seed", "out", "threads"):
        if ctx_obj.get(key) is not None:
            cfg[key] = ctx_obj[key]
    return cfg


def _fixture_from_spec(spec, seed):
    spec = dict(spec)
    name = spec.pop("name", None)
    if name is None:
        raise ParameterError("fixture spec needs a 'name'")
    if name in ("annulus", "sphere", "torus30") and "seed" not in spec:
        spec["seed"] = seed
    noise = spec.pop("noise", 0.0)
    fx = manifolds.make_fixture(name, **spec)
    if noise:
        noisy = manifolds.add_noise(fx.cloud, noise, seed)
        fx = manifolds.Fixture(fx.name, noisy, fx.features, {**fx.params, "noise": noise},
                               fx.coords, fx.tangents, fx.gradients)
    return fx


def _inputs(cfg, cloud_path, feature_path, need_features=True):
    """Point cloud and features from files or from a fixture spec in the config."""
    fx = None
    if cloud_path is not None:
        cloud = load_point_cloud(cloud_path)
    elif "fixture" in cfg:
        fx = _fixture_from_spec(cfg["fixture"], cfg["seed"])
        cloud = fx.cloud
    elif "cloud" in cfg:
        cloud = load_point_cloud(cfg["cloud"])
    else:
        raise ParameterError("give a point cloud file or a 'fixture' in --config")
    feats = None
    feature_path = feature_path or cfg.get("features")
    if feature_path is not None:
        feats = load_features(feature_path)
    elif fx is not None and fx.features:
        feats = fx.feature(cfg.get("feature"))
    if need_features and feats is None:
        raise ParameterError("a feature file (or fixture feature) is required")
    if feats is not None:
        feats.check_aligned(cloud)
    return cloud, feats, fx


def _out_dir(cfg):
    out = Path(cfg.get("out") or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _idm_params(cfg):
    from .idm import IdmParams
    return IdmParams(tau=float(cfg["tau"]), iterations=int(cfg["iters"]), k=int(cfg["k"]),
                     k2=int(cfg["k2"]), L=int(cfg["L"]), M=int(cfg["modes"]),
                     mode=cfg["mode"], seed=int(cfg["seed"]),
                     form=cfg.get("form", "blend"), s_factor=float(cfg["s_factor"]))


def _clip_k(cfg, n):
    cfg["k"] = min(int(cfg["k"]), n)
    cfg["k2"] = min(int(cfg["k2"]), cfg["k"])
    return cfg


# ---------------------------------------------------------------------------
# command group

class _Group(click.Group):
    """Maps library exceptions onto exit codes."""

    def invoke(self, ctx):
        try:
            limits = ctx.params.get("threads")
            if limits:
                from threadpoolctl import threadpool_limits
                with threadpool_limits(limits=limits):
                    return super().invoke(ctx)
            return super().invoke(ctx)
        except ParameterError as exc:
            click.echo(f"error: {exc}", err=True)
            ctx.exit(EXIT_USAGE)
        except DataValidationError as exc:
            click.echo(f"data error: {exc}", err=True)
            ctx.exit(EXIT_DATA)
        except NumericalError as exc:
            click.echo(f"numerical failure: {exc}", err=True)
            ctx.exit(EXIT_NUMERICAL)
        except IdmError as exc:
            # unreadable or unwritable files
            click.echo(f"error: {exc}", err=True)
            ctx.exit(EXIT_DATA)


@click.group(cls=_Group)
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="JSON file with run settings; flags override it.")
@click.option("--out", type=click.Path(), default=None, help="Output directory.")
@click.option("--seed", type=int, default=None)
@click.option("--threads", type=click.IntRange(min=1), default=None,
              help="Cap on BLAS worker threads.")
@click.option("-v", "--verbose", count=True)
@click.pass_context
def main(ctx, config_path, out, seed, threads, verbose):
    """Iterated diffusion maps and their diagnostics."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2),
                        format="%(levelname)s %(message)s")
    ctx.ensure_object(dict)
    ctx.obj.update(config=_load_config(config_path), out=out, seed=seed, threads=threads)


# ---------------------------------------------------------------------------
# generate

@main.command()
@click.argument("fixture", type=click.Choice(sorted(manifolds.FIXTURES)))
@click.option("--n", "n", type=int, default=None, help="Sample count (circle, annulus, sphere).")
@click.option("--grid", type=int, default=None, help="Grid size per angle (torus, torus30).")
@click.option("--noise", type=float, default=0.0, help="Isotropic noise variance.")
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv")
@click.pass_obj
def generate(obj, fixture, n, grid, noise, fmt):
    """Write a synthetic fixture: cloud, features and manifest."""
    cfg = _merge(obj)
    params = {}
    if fixture in ("circle", "annulus", "sphere"):
        params["N"] = n if n is not None else cfg.get("n", 2000)
    else:
        params["grid_size"] = grid if grid is not None else cfg.get("grid", 100)
    if fixture in ("annulus", "sphere", "torus30"):
        params["seed"] = cfg["seed"]
    if noise < 0:
        raise ParameterError("noise must be non-negative")
    if fixture == "circle" and params["N"] < 3:
        # tiny circles are allowed for smoke tests
        theta = 2 * np.pi * np.arange(params["N"]) / params["N"]
        pts = np.column_stack([np.cos(theta), np.sin(theta)])
        if params["N"] < 2:
            raise ParameterError("circle needs at least 2 points")
        fx = manifolds.Fixture("circle", PointCloud(pts), {"identity": FeatureSet(pts)},
                               {"N": params["N"]})
    else:
        fx = manifolds.make_fixture(fixture, **params)
    cloud = fx.cloud
    if noise:
        cloud = manifolds.add_noise(cloud, noise, cfg["seed"])
    out = _out_dir(cfg)
    save_point_cloud(cloud, out / f"cloud.{fmt}", fmt)
    for name, feat in fx.features.items():
        save_features(feat, out / f"features_{name}.{fmt}", fmt)
    manifest = fx.manifest()
    manifest["noise"] = noise
    manifest["seed"] = cfg["seed"]
    _write_json(out / "manifest.json", manifest)
    click.echo(f"wrote {cloud.N} points to {out}")


# ---------------------------------------------------------------------------
# tune

@main.command()
@click.argument("cloud_path", type=click.Path(), required=False)
@click.option("--k", type=int, default=None)
@click.option("--L", "L", type=int, default=None)
@click.option("--mode", type=click.Choice(["simple", "robust"]), default=None)
@click.option("--point", "points", type=int, multiple=True,
              help="Base point index (repeatable); default is every point.")
@click.option("--near", type=str, default=None,
              help="Comma-separated coordinates; the nearest sample is the base point.")
@click.pass_obj
def tune(obj, cloud_path, k, L, mode, points, near):
    """Per-point bandwidth scans (d1, d2, scaling laws, agreement metric)."""
    from .local_analysis import bandwidth_scan
    from .neighbors import knn

    cfg = _merge(obj, k=k, L=L, mode=mode)
    cloud, _, _ = _inputs(cfg, cloud_path, None, need_features=False)
    if cloud.N < 2:
        raise ParameterError("bandwidth tuning needs at least 2 points")
    cfg = _clip_k(cfg, cloud.N)
    base = list(points)
    if near is not None:
        z = np.array([float(t) for t in near.split(",")])
        if z.size != cloud.m:
            raise ParameterError(f"--near needs {cloud.m} coordinates")
        base.append(int(np.argmin(np.linalg.norm(cloud.points - z, axis=1))))
    if not base:
        base = list(range(cloud.N))
    for i in base:
        if not 0 <= i < cloud.N:
            raise ParameterError(f"base point {i} out of range")
    graph = knn(cloud, int(cfg["k"]))
    out = _out_dir(cfg)
    summary = []
    for i in base:
        # the robust scan also carries d1, so both selections come from one pass
        scan = bandwidth_scan(cloud, graph, i, int(cfg["L"]), mode="robust")
        names, table = scan.table()
        _write_rows(out / f"scan_{i}.csv", names, table)
        l_simple = int(np.nanargmax(scan.d1))
        summary.append([i, scan.eps[l_simple + 1], scan.d1[l_simple],
                        scan.eps_selected, scan.dim_selected])
    _write_rows(out / "selection.csv",
                ["base_index", "simple_eps", "simple_dim", "robust_eps", "robust_dim"], summary)
    click.echo(f"wrote {len(base)} scans to {out}")


# ---------------------------------------------------------------------------
# derivative

@main.command()
@click.argument("cloud_path", type=click.Path(), required=False)
@click.argument("feature_path", type=click.Path(), required=False)
@click.option("--k", type=int, default=None)
@click.option("--L", "L", type=int, default=None)
@click.option("--mode", type=click.Choice(["simple", "robust"]), default=None)
@click.pass_obj
def derivative(obj, cloud_path, feature_path, k, L, mode):
    """Local derivative, dimension and density at every sample."""
    from .local_analysis import estimate_derivatives
    from .neighbors import knn

    cfg = _merge(obj, k=k, L=L, mode=mode)
    cloud, feats, _ = _inputs(cfg, cloud_path, feature_path)
    cfg = _clip_k(cfg, cloud.N)
    field = estimate_derivatives(cloud, feats, knn(cloud, int(cfg["k"])), int(cfg["L"]),
                                 cfg["mode"])
    out = _out_dir(cfg)
    write_matrix(out / "derivatives.csv", field.derivs.reshape(cloud.N, -1))
    _write_rows(out / "local.csv", ["bandwidth", "dimension", "density", "rank"],
                zip(field.epsilons, field.local_dim, field.density, field.ranks))
    _write_json(out / "derivatives.meta.json",
                {"shape": list(field.derivs.shape), "k": cfg["k"], "L": cfg["L"],
                 "mode": cfg["mode"]})
    click.echo(f"wrote derivatives of shape {field.derivs.shape} to {out}")


# ---------------------------------------------------------------------------
# diffusion-map

def _diffusion_map(cloud, cfg, s=None):
    from .kernels import anisotropic_distance, assemble_kernel, global_bandwidth
    from .local_analysis import local_geometry
    from .neighbors import knn
    from .spectral import RescaledMapParams, density_normalize, eigensolve, rescaled_map

    graph = knn(cloud, int(cfg["k"]))
    _, dims, q = local_geometry(graph, int(cfg["L"]))
    dist = anisotropic_distance(cloud, graph, None, 0.0)
    eps = global_bandwidth(dist, int(cfg["k2"]))
    J = assemble_kernel(dist, eps, graph)
    decomp = density_normalize(eigensolve(J, int(cfg["modes"]), seed=int(cfg["seed"])), q)
    s = float(cfg["s_factor"]) * eps if s is None else s
    emb = rescaled_map(decomp, RescaledMapParams(s, int(cfg["modes"]), dims), 1)
    return graph, J, decomp, emb


@main.command("diffusion-map")
@click.argument("cloud_path", type=click.Path(), required=False)
@click.option("--k", type=int, default=None)
@click.option("--k2", type=int, default=None)
@click.option("--modes", type=int, default=None)
@click.option("--time", "s", type=float, default=None, help="Diffusion time (default s_factor * eps).")
@click.option("--dump-kernel", is_flag=True, help="Also write the kernel as COO triples.")
@click.pass_obj
def diffusion_map(obj, cloud_path, k, k2, modes, s, dump_kernel):
    """Plain (isotropic) rescaled diffusion map."""
    cfg = _merge(obj, k=k, k2=k2, modes=modes)
    cloud, _, _ = _inputs(cfg, cloud_path, None, need_features=False)
    cfg = _clip_k(cfg, cloud.N)
    if s is not None and not s > 0:
        raise ParameterError("--time must be positive")
    _, J, decomp, emb = _diffusion_map(cloud, cfg, s)
    out = _out_dir(cfg)
    save_embedding(emb, out / "embedding.csv")
    _write_rows(out / "eigenvalues.csv", ["mode", "xi", "lambda"],
                [(r, decomp.xi[r], decomp.lam[r]) for r in range(decomp.xi.size)])
    if dump_kernel:
        coo = J.entries.tocoo()
        _write_rows(out / "kernel.csv", ["i", "j", "value"],
                    zip(coo.row.tolist(), coo.col.tolist(), coo.data))
    _write_json(out / "diffusion_map.json",
                {"epsilon": J.epsilon, "s": emb.s, "k": cfg["k"], "k2": cfg["k2"],
                 "modes": emb.M})
    click.echo(f"wrote a {emb.M}-mode embedding to {out}")


# ---------------------------------------------------------------------------
# idm

def _save_iteration(out, index, emb, rec, neighbors):
    d = out / f"iter_{index}"
    d.mkdir(parents=True, exist_ok=True)
    save_embedding(emb, d / "embedding.csv")
    if neighbors is not None:
        _write_rows(d / "neighbors.csv", ["rank", "index"], enumerate(neighbors.tolist()))
    if rec is None:
        return
    decomp = rec.decomposition
    _write_rows(d / "eigenvalues.csv", ["mode", "xi", "lambda"],
                [(r, decomp.xi[r], decomp.lam[r]) for r in range(decomp.xi.size)])
    f = rec.derivatives
    _write_json(d / "diagnostics.json", {
        "iteration": index,
        "epsilon": rec.epsilon,
        "s": rec.s,
        "local_dim": {"min": float(f.local_dim.min()), "median": float(np.median(f.local_dim)),
                      "max": float(f.local_dim.max())},
        "regression_rank": {"min": int(f.ranks.min()), "max": int(f.ranks.max())},
        "max_derivative_norm": float(np.max(np.linalg.norm(f.derivs, axis=(1, 2)))),
    })


@main.command()
@click.argument("cloud_path", type=click.Path(), required=False)
@click.argument("feature_path", type=click.Path(), required=False)
@click.option("--tau", type=float, default=None)
@click.option("--iters", type=int, default=None)
@click.option("--k", type=int, default=None)
@click.option("--k2", type=int, default=None)
@click.option("--modes", type=int, default=None)
@click.option("--mode", type=click.Choice(["simple", "robust"]), default=None)
@click.option("--base-index", type=int, default=None,
              help="Sample whose neighbor sets are recorded per iteration.")
@click.option("--count", type=int, default=None, help="Neighbor count for --base-index.")
@click.pass_obj
def idm(obj, cloud_path, feature_path, tau, iters, k, k2, modes, mode, base_index, count):
    """Iterated diffusion map with per-iteration artifacts."""
    from .idm import idm_run, level_set_spread, neighbor_evolution, aligned_change

    cfg = _merge(obj, tau=tau, iters=iters, k=k, k2=k2, modes=modes, mode=mode,
                 base_index=base_index, count=count)
    cloud, feats, fx = _inputs(cfg, cloud_path, feature_path)
    cfg = _clip_k(cfg, cloud.N)
    params = _idm_params(cfg)
    out = _out_dir(cfg)
    traj = idm_run(cloud, feats, params, keep_recipes=False,
                   callback=lambda i, e, r: log.info("iteration %d done", i))
    nb = None
    if cfg.get("base_index") is not None:
        nb = neighbor_evolution(traj, int(cfg["base_index"]), int(cfg.get("count") or 200))
    for index, emb in enumerate(traj.embeddings):
        rec = traj.records[index - 1] if index else None
        _save_iteration(out, index, emb, rec, None if nb is None else nb[index])
    save_features(feats, out / "features.csv")
    spreads = [level_set_spread(e.coords, feats.values) for e in traj.embeddings]
    _write_rows(out / "contraction.csv", ["iteration", "level_set_spread"], enumerate(spreads))
    summary = {"params": params.to_dict(), "iterations": traj.n_iterations,
               "level_set_spread": spreads}
    if fx is not None:
        summary["fixture"] = fx.manifest()
    if params.tau == 0.0 and traj.n_iterations >= 2:
        # degeneracy run: successive passes should agree up to rotations
        changes = []
        for a, b in zip(traj.records[:-1], traj.records[1:]):
            n = min(10, a.decomposition.n_modes, b.decomposition.n_modes)
            changes.append(aligned_change(a.decomposition.phi[:, 1:n + 1],
                                          b.decomposition.phi[:, 1:n + 1],
                                          a.decomposition.lam[1:n + 1]))
        summary["iterated_identity"] = {"aligned_eigenfunction_change": changes}
        _write_json(out / "identity_report.json", summary["iterated_identity"])
    _write_json(out / "trajectory.json", summary)
    click.echo(f"wrote {traj.n_iterations + 1} iterations to {out}")


# ---------------------------------------------------------------------------
# eval

_LAYOUT = "expected <dir>/iter_0/embedding.csv, ..., <dir>/features.csv"


def _load_trajectory_dir(path):
    root = Path(path)
    if not (root / "iter_0" / "embedding.csv").exists():
        raise ArtifactMissing(f"{root} is not a trajectory directory ({_LAYOUT})")
    embs = []
    i = 0
    while (root / f"iter_{i}" / "embedding.csv").exists():
        embs.append(load_embedding(root / f"iter_{i}" / "embedding.csv"))
        i += 1
    return root, embs


@main.command("eval")
@click.argument("traj_dir", type=click.Path())
@click.option("--which", type=click.Choice(["distances", "neighbors", "decoder", "fixedpoint"]),
              required=True)
@click.option("--base-index", type=int, default=0)
@click.option("--count", type=int, default=200)
@click.option("--times", type=str, default="1e-4,1e-3,1e-2",
              help="Comma-separated diffusion times for --which distances.")
@click.pass_obj
def eval_(obj, traj_dir, which, base_index, count, times):
    """Diagnostics computed from a saved trajectory directory."""
    from .idm import (feature_embedding, fit_decoder, fixed_point_residual, holdout_split,
                      cv_residual, neighbor_evolution)

    root, embs = _load_trajectory_dir(traj_dir)
    cfg = _merge(obj)
    saved = root / "trajectory.json"
    if saved.exists():
        # settings of the run, unless the config file overrides them
        p = json.loads(saved.read_text()).get("params", {})
        stored = {"k": p.get("k"), "k2": p.get("k2"), "L": p.get("L"), "modes": p.get("M"),
                  "mode": p.get("mode"), "s_factor": p.get("s_factor")}
        given = obj.get("config", {})
        cfg.update({key: v for key, v in stored.items() if v is not None and key not in given})
    out = Path(cfg["out"]) if cfg.get("out") else root
    out.mkdir(parents=True, exist_ok=True)
    cloud = PointCloud(embs[0].coords)
    cfg = _clip_k(cfg, cloud.N)

    if which == "neighbors":
        if not 0 <= base_index < cloud.N:
            raise ParameterError(f"base index {base_index} out of range")
        nb = neighbor_evolution(embs, base_index, min(count, cloud.N))
        _write_rows(out / "neighbors.csv", ["iteration"] + [f"n{j}" for j in range(len(nb[0]))],
                    [[i] + list(map(int, n)) for i, n in enumerate(nb)])
        click.echo(f"wrote neighbor lists for {len(nb)} iterations")
        return

    if which == "distances":
        from scipy.sparse import csr_matrix
        from scipy.sparse.csgraph import dijkstra

        ts = [float(t) for t in times.split(",") if t.strip()]
        if not ts or any(t <= 0 for t in ts):
            raise ParameterError("--times must be positive")
        graph, _, decomp, _ = _diffusion_map(cloud, cfg)
        from .spectral import RescaledMapParams, rescaled_map
        from .local_analysis import local_geometry
        dims = local_geometry(graph, int(cfg["L"]))[1]
        # shortest paths along the k-NN graph stand in for geodesics
        n, k = graph.indices.shape
        W = csr_matrix((graph.distances.ravel(), (np.repeat(np.arange(n), k),
                                                   graph.indices.ravel())), shape=(n, n))
        geo = dijkstra(W, directed=False, indices=base_index)
        euc = np.linalg.norm(cloud.points - cloud.points[base_index], axis=1)
        cols = [euc, geo]
        for t in ts:
            e = rescaled_map(decomp, RescaledMapParams(t, int(cfg["modes"]), dims))
            cols.append(np.linalg.norm(e.coords - e.coords[base_index], axis=1))
        _write_rows(out / "distances.csv",
                    ["index", "euclidean", "geodesic"] + [f"diffusion_t={t:g}" for t in ts],
                    [[j] + [c[j] for c in cols] for j in range(n)])
        click.echo(f"wrote distance comparison for {len(ts)} diffusion times")
        return

    feat_file = root / "features.csv"
    if not feat_file.exists():
        raise ArtifactMissing(f"missing {feat_file} ({_LAYOUT})")
    feats = load_features(feat_file)
    feats.check_aligned(cloud)

    if which == "fixedpoint":
        r = fixed_point_residual(cloud, feats, k=int(cfg["k"]), L=int(cfg["L"]))
        _write_json(out / "fixedpoint.json", {"residual": r})
        click.echo(f"fixed-point residual {r:.6g}")
        return

    params = _idm_params({**cfg, "tau": 0.0})
    target = feature_embedding(feats, params)
    split = holdout_split(cloud.N, 0.2, int(cfg["seed"]))
    rows = []
    for i, e in enumerate(embs):
        dec = fit_decoder(e, target)
        rows.append([i, dec.residual, cv_residual(e.coords, target.coords, split)])
    _write_rows(out / "decoder.csv", ["iteration", "residual", "holdout_residual"], rows)
    click.echo(f"final decoder residual {rows[-1][1]:.6g}")


# ---------------------------------------------------------------------------
# nystrom

@main.command()
@click.argument("cloud_path", type=click.Path(), required=False)
@click.argument("new_path", type=click.Path(), required=False)
@click.option("--features", "feature_path", type=click.Path(), default=None,
              help="Feature file; when given the iterated map is extended.")
@click.option("--tau", type=float, default=None)
@click.option("--iters", type=int, default=None)
@click.option("--k", type=int, default=None)
@click.option("--k2", type=int, default=None)
@click.option("--modes", type=int, default=None)
@click.pass_obj
def nystrom(obj, cloud_path, new_path, feature_path, tau, iters, k, k2, modes):
    """Fit on a cloud and extend the embedding to new points."""
    from .estimators import DiffusionMap, IteratedDiffusionMap

    cfg = _merge(obj, tau=tau, iters=iters, k=k, k2=k2, modes=modes)
    new_path = new_path or cfg.get("new")
    if new_path is None:
        raise ParameterError("a file of new points is required")
    cloud, feats, _ = _inputs(cfg, cloud_path, feature_path, need_features=False)
    cfg = _clip_k(cfg, cloud.N)
    Z, _ = read_matrix(new_path)
    if Z.shape[1] != cloud.m:
        raise DataValidationError(f"new points have {Z.shape[1]} columns, cloud has {cloud.m}")
    if feats is None:
        est = DiffusionMap(n_components=int(cfg["modes"]), n_neighbors=int(cfg["k"]),
                           k2=int(cfg["k2"]), L=int(cfg["L"]), random_state=int(cfg["seed"]))
        est.fit(cloud.points)
    else:
        est = IteratedDiffusionMap(tau=float(cfg["tau"]), n_iter=int(cfg["iters"]),
                                   n_components=int(cfg["modes"]), n_neighbors=int(cfg["k"]),
                                   k2=int(cfg["k2"]), L=int(cfg["L"]),
                                   random_state=int(cfg["seed"]))
        est.fit(cloud.points, feats.values)
    out = _out_dir(cfg)
    write_matrix(out / "extended.csv", est.transform(Z))
    write_matrix(out / "embedding.csv", est.embedding_)
    click.echo(f"extended {Z.shape[0]} points")


def run():  # console-script entry point
    sys.exit(main(standalone_mode=True))


if __name__ == "__main__":
    run()
