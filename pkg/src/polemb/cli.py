"""Command-line pipeline: population -> episodes -> splits -> embeddings -> evaluation -> RL -> report.

Usage:
    polemb gen-population --config run.yaml
    polemb collect --config run.yaml
    polemb split --config run.yaml --mode weak
    polemb split --config run.yaml --mode strong --counts 15,5,5
    polemb train-embed --config run.yaml --mode weak --lambda-grid 0.01,0.05,0.1,0.5
    polemb eval-embed --config run.yaml --mode weak
    polemb train-rl --config run.yaml
    polemb report --config run.yaml

Environment variables:
    POLEMB_OUTPUT_ROOT  prefix for relative output directories
    POLEMB_THREADS      worker processes for episode collection (default 1)
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import agents as ag
from .embed import VARIANT_NAMES, EmbeddingModel, TrainConfig, select_lambda, train_embedding, write_curves
from .env import ARENA, SIGNAL, MarkovGameSpec, read_episodes_jsonl, write_episodes_jsonl
from .errors import ConfigError, NumericError, PolembError, SplitError, TrainingError
from .evaluation import (build_outcome_dataset, iicr, pca_project, phase_embeddings, train_outcome_classifier,
                         write_pca_csv)
from .graph import (BIPARTITE, CLIQUE, SplitSpec, build_graph, graph_from_episodes, phase_episodes, split_strong,
                    split_weak, split_weak_per_node)
from .rl_opt import (EmbeddingProvider, RLConfig, _pooled, conditioned_speaker_training, evaluate, head_to_head,
                     offline_table, train_conditioned_agent)

log = logging.getLogger("polemb")

EXIT_USAGE, EXIT_CONFIG, EXIT_NUMERIC, EXIT_OTHER = 2, 3, 4, 1
MODES = ("weak", "strong")


# --- configuration --------------------------------------------------------------


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    env: dict = field(default_factory=lambda: {"kind": ARENA})
    population: dict = field(default_factory=lambda: {"n": 8})
    graph: dict = field(default_factory=lambda: {"episodes_per_edge": 10})
    split: dict = field(default_factory=dict)
    embed: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)
    rl: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a mapping")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**d)
        for k in ("env", "population", "graph", "split", "embed", "eval", "rl"):
            if not isinstance(getattr(cfg, k), dict):
                raise ConfigError(f"config section {k!r} must be a mapping")
        if cfg.env.get("kind", ARENA) not in (ARENA, SIGNAL):
            raise ConfigError(f"env.kind must be {ARENA!r} or {SIGNAL!r}")
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh) or {}
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        except yaml.YAMLError as e:
            raise ConfigError(f"config {path} is not valid YAML: {e}") from e
        return cls.from_dict(data)

    @property
    def kind(self) -> str:
        return self.env.get("kind", ARENA)

    def game_spec(self) -> MarkovGameSpec:
        kw = {k: v for k, v in self.env.items() if k != "kind"}
        try:
            return MarkovGameSpec(env_kind=self.kind, **{"horizon": 50 if self.kind == ARENA else 25, **kw})
        except TypeError as e:
            raise ConfigError(f"bad env section: {e}") from e

    def run_dir(self) -> Path:
        p = Path(self.output_dir)
        root = os.environ.get("POLEMB_OUTPUT_ROOT")
        if root and not p.is_absolute():
            p = Path(root) / p
        return p

    def topology(self) -> str:
        return self.graph.get("topology", CLIQUE if self.kind == ARENA else BIPARTITE)

    def train_config(self, **over) -> TrainConfig:
        e = self.embed
        base = dict(
            d=e.get("d", 16 if self.kind == ARENA else 5),
            epochs=e.get("epochs", 50),
            learning_rate=e.get("learning_rate", 1e-3),
            update_mode=e.get("update_mode", "per_negative"),
            lambda_grid=tuple(e.get("lambda_grid", (0.01, 0.05, 0.1, 0.5))),
            encoder_hidden=tuple(e.get("encoder_hidden", (100, 100))),
            decoder_hidden=tuple(e.get("decoder_hidden", (64, 64))),
            seed=e.get("seed", self.seed),
        )
        base.update(over)
        return TrainConfig(**base)

    def rl_config(self, **over) -> RLConfig:
        keys = ("iterations", "batch_episodes", "learning_rate", "hidden", "eval_every", "eval_games")
        base = {k: self.rl[k] for k in keys if k in self.rl}
        base["seed"] = self.rl.get("seed", self.seed)
        base.update(over)
        return RLConfig(**base)


def _threads() -> int:
    v = os.environ.get("POLEMB_THREADS", "1")
    try:
        n = int(v)
    except ValueError as e:
        raise ConfigError(f"POLEMB_THREADS must be an integer, got {v!r}") from e
    if n < 1:
        raise ConfigError("POLEMB_THREADS must be >= 1")
    return n


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    return str(v)


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _read_json(path: Path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as e:
        raise ConfigError(f"missing artifact {path}; run the earlier pipeline step first") from e


# --- pipeline steps ---------------------------------------------------------------


def _population(cfg: RunConfig) -> ag.Population:
    seed = cfg.population.get("seed", cfg.seed)
    if cfg.kind == ARENA:
        return ag.arena_population(int(cfg.population.get("n", 8)), seed)
    return ag.signal_population(seed)


def cmd_gen_population(cfg: RunConfig, args) -> None:
    pop = _population(cfg)
    _write_json(cfg.run_dir() / "population.json", ag.population_manifest(pop))
    print(f"population: {len(pop.ids)} agents")


def _load_population(cfg: RunConfig) -> ag.Population:
    return ag.population_from_manifest(_read_json(cfg.run_dir() / "population.json"))


def cmd_collect(cfg: RunConfig, args) -> None:
    pop = _load_population(cfg)
    g = build_graph(pop, cfg.game_spec(), int(cfg.graph.get("episodes_per_edge", 10)), cfg.topology(),
                    cfg.graph.get("seed", cfg.seed), workers=_threads())
    write_episodes_jsonl(cfg.run_dir() / "episodes.jsonl", g.episodes())
    _write_json(cfg.run_dir() / "graph.json", g.manifest())
    print(f"collected {g.n_episodes()} episodes on {len(g.edges)} edges")


def _load_graph(cfg: RunConfig):
    pop = _load_population(cfg)
    path = cfg.run_dir() / "episodes.jsonl"
    if not path.exists():
        raise ConfigError(f"missing artifact {path}; run collect first")
    g = graph_from_episodes(pop, cfg.game_spec(), read_episodes_jsonl(path), cfg.topology(),
                            cfg.graph.get("seed", cfg.seed))
    return pop, g


def _parse_counts(text) -> tuple[int, int, int]:
    try:
        parts = tuple(int(x) for x in str(text).split(","))
    except ValueError as e:
        raise ConfigError(f"counts must be three integers, got {text!r}") from e
    if len(parts) != 3:
        raise ConfigError(f"counts must be three integers, got {text!r}")
    return parts


def _embedded_role(cfg: RunConfig):
    return None if cfg.kind == ARENA else "listener"


def cmd_split(cfg: RunConfig, args) -> None:
    _, g = _load_graph(cfg)
    seed = cfg.split.get("seed", cfg.seed)
    if args.mode == "weak":
        if cfg.kind == ARENA:
            frac = args.train_fraction if args.train_fraction is not None else cfg.split.get("train_fraction", 0.6)
            sp = split_weak(g, float(frac), seed)
        else:
            sp = split_weak_per_node(g, "listener", seed)
    else:
        counts = args.counts or cfg.split.get("counts")
        if counts is None:
            raise ConfigError("strong split needs counts (config split.counts or --counts)")
        sp = split_strong(g, _parse_counts(counts) if isinstance(counts, str) else tuple(counts), seed,
                          _embedded_role(cfg))
    sp.save(cfg.run_dir() / f"split_{args.mode}.json")
    sizes = {p: len(v) for p, v in sp.edges.items()}
    print(f"{args.mode} split: train edges {sizes['train']}, valid {sizes['valid']}, test {sizes['test']}")


def _load_split(cfg: RunConfig, mode: str) -> SplitSpec:
    path = cfg.run_dir() / f"split_{mode}.json"
    if not path.exists():
        raise ConfigError(f"missing artifact {path}; run split --mode {mode} first")
    return SplitSpec.load(path)


def _model_dir(cfg: RunConfig, mode: str, name: str) -> Path:
    return cfg.run_dir() / "models" / mode / name


def cmd_train_embed(cfg: RunConfig, args) -> None:
    _, g = _load_graph(cfg)
    sp = _load_split(cfg, args.mode)
    over = {}
    if args.lambda_grid:
        try:
            over["lambda_grid"] = tuple(float(x) for x in args.lambda_grid.split(","))
        except ValueError as e:
            raise ConfigError(f"bad --lambda-grid {args.lambda_grid!r}") from e
    tc = cfg.train_config(**over)
    variants = cfg.embed.get("variants", ["im", "id", "hyb"])
    rows = []
    for v in variants:
        if v == "hyb":
            best, table, results = select_lambda(g, sp, tc)
            for lam, loss in table:
                res = results[lam]
                d = _model_dir(cfg, args.mode, f"hyb_lam{lam:g}")
                res.model.save(d)
                write_curves(d / "curves.csv", res.curves)
                rows.append((lam, loss, int(lam == best)))
            _write_csv(cfg.run_dir() / "models" / args.mode / "lambda_selection.csv",
                       ["lambda", "valid_imitation", "selected"], rows)
            _write_json(cfg.run_dir() / "models" / args.mode / "selected.json", {"hyb": f"hyb_lam{best:g}", "lambda": best})
            print(f"{args.mode}: selected lambda {best:g}")
        else:
            res = train_embedding(g, sp, TrainConfig(**{**asdict(tc), "variant": v}))
            d = _model_dir(cfg, args.mode, v)
            res.model.save(d)
            write_curves(d / "curves.csv", res.curves)
            print(f"{args.mode}: trained {VARIANT_NAMES[v]}")


def _variant_dirs(cfg: RunConfig, mode: str) -> dict[str, Path]:
    """Variant name -> model directory, for the variants present on disk."""
    base = cfg.run_dir() / "models" / mode
    out = {}
    for v in ("im", "id"):
        if (base / v / "encoder.bin").exists():
            out[VARIANT_NAMES[v]] = base / v
    sel = base / "selected.json"
    if sel.exists():
        out[VARIANT_NAMES["hyb"]] = base / _read_json(sel)["hyb"]
    return out


def cmd_eval_embed(cfg: RunConfig, args) -> None:
    _, g = _load_graph(cfg)
    sp = _load_split(cfg, args.mode)
    dirs = _variant_dirs(cfg, args.mode)
    if not dirs:
        raise ConfigError(f"no trained models for mode {args.mode}; run train-embed first")
    ev = cfg.eval
    metrics = {}
    for name, d in dirs.items():
        model = EmbeddingModel.load(d)
        test = phase_episodes(g, sp, "test")
        emb = phase_embeddings(model.encoder, test)
        m = {"iicr": iicr(emb)}
        if cfg.kind == ARENA:
            train_edges = sp.edges["train"]
            tr = build_outcome_dataset(g, train_edges, model.encoder)
            te = build_outcome_dataset(g, sp.edges["test"], model.encoder)
            clf = train_outcome_classifier(tr, cfg.seed, epochs=int(ev.get("classifier_epochs", 50)))
            m.update(accuracy=clf.accuracy(te), majority=te.majority_rate(), n_test=len(te))
        metrics[name] = m
        if name == VARIANT_NAMES["hyb"]:
            _export_pca(cfg, args.mode, model, test)
    _write_json(cfg.run_dir() / "eval" / f"{args.mode}.json", metrics)
    for name, m in metrics.items():
        print(f"{args.mode} {name}: " + ", ".join(f"{k}={_fmt(v)}" for k, v in m.items()))


def _export_pca(cfg: RunConfig, mode: str, model: EmbeddingModel, test) -> None:
    rng = np.random.default_rng(cfg.seed)
    agents = sorted(a for a, eps in test.items() if eps)
    k_agents = min(int(cfg.eval.get("pca_agents", 5)), len(agents))
    picked = sorted(agents[i] for i in rng.choice(len(agents), k_agents, replace=False))
    n_eps = int(cfg.eval.get("pca_episodes", 10))
    pts, labels = [], []
    for a in picked:
        z = phase_embeddings(model.encoder, {a: test[a][:n_eps]})[a]
        pts.append(z)
        labels += [a] * len(z)
    x = np.concatenate(pts)
    k = min(int(cfg.eval.get("pca_components", 3)), x.shape[1], len(x) - 1)
    res = pca_project(x, k)
    (cfg.run_dir() / "eval").mkdir(parents=True, exist_ok=True)
    write_pca_csv(cfg.run_dir() / "eval" / f"pca_{mode}.csv", res.coords, labels)


def cmd_train_rl(cfg: RunConfig, args) -> None:
    pop, g = _load_graph(cfg)
    out = cfg.run_dir() / "rl"
    if cfg.kind == SIGNAL:
        _train_rl_signal(cfg, pop, g, out)
    else:
        _train_rl_arena(cfg, pop, g, out)


def _train_rl_arena(cfg: RunConfig, pop, g, out: Path) -> None:
    rl = cfg.rl
    n_tr, n_te = int(rl.get("train_opponents", 5)), int(rl.get("test_opponents", 5))
    ids = pop.ids
    if n_tr + n_te > len(ids):
        raise ConfigError(f"need {n_tr + n_te} opponents, population has {len(ids)}")
    perm = [ids[k] for k in np.random.default_rng(cfg.seed).permutation(len(ids))]
    train_ids, test_ids = sorted(perm[:n_tr]), sorted(perm[n_tr : n_tr + n_te])
    dirs = _variant_dirs(cfg, rl.get("embedding_mode", "weak"))
    if VARIANT_NAMES["hyb"] not in dirs:
        raise ConfigError("arena RL needs a trained Emb-Hyb model; run train-embed first")
    enc = EmbeddingModel.load(dirs[VARIANT_NAMES["hyb"]]).encoder
    table = offline_table(enc, g, train_ids + test_ids)
    rc = cfg.rl_config()
    spec = g.spec
    tp = {j: pop.policies[j] for j in train_ids}
    ep = {j: pop.policies[j] for j in test_ids}
    provs = {"baseline": EmbeddingProvider("none", enc.d),
             "Emb-Hyb": EmbeddingProvider("offline", enc.d, table=table)}
    pols, rows, snaps = {}, [], {}
    for name, prov in provs.items():
        pol, tlog = train_conditioned_agent(spec, tp, ep, prov, rc)
        pols[name] = pol
        snaps[name] = tlog.snapshots
        for r in tlog.curves:
            rows.append([name, r["iteration"], r["train_win_rate"], r["test_win_rate"], r["test_win_hw"]])
    _write_csv(out / "fig5_curves.csv", ["variant", "iteration", "train_win_rate", "test_win_rate", "test_win_hw"], rows)
    # conditioned vs baseline head-to-head at each checkpoint. A learner has no
    # offline episodes, so against another learner the conditioned side embeds online
    online = EmbeddingProvider("online", enc.d, enc)
    h2h_rows = []
    n_games = rc.eval_games
    for it in sorted(snaps["Emb-Hyb"]):
        a = copy.copy(pols["Emb-Hyb"]); a.net = snaps["Emb-Hyb"][it]
        b = copy.copy(pols["baseline"]); b.net = snaps["baseline"][it]
        sa, _ = head_to_head(spec, a, b, n_games, cfg.seed + it, online, provs["baseline"])
        h2h_rows.append([it, sa.win_rate, sa.loss_rate, sa.draw_rate, sa.half_widths()["win"]])
    _write_csv(out / "fig6_head_to_head_curve.csv", ["iteration", "emb_win_rate", "emb_loss_rate", "draw_rate", "win_hw"],
               h2h_rows)
    # final head-to-head matrix over agents, including zero/rand ablations of the conditioned policy
    entrants = {
        "baseline": (pols["baseline"], provs["baseline"]),
        "Emb-Hyb": (pols["Emb-Hyb"], provs["Emb-Hyb"]),
        "Emb-zero": (pols["Emb-Hyb"], EmbeddingProvider("zero", enc.d)),
        "Emb-rand": (pols["Emb-Hyb"], EmbeddingProvider("rand", enc.d, table=table, seed=cfg.seed)),
    }
    test_rows = []
    for name, (pol, prov) in entrants.items():
        st = _pooled(evaluate(spec, pol, ep, prov, n_games, cfg.seed + 1))
        test_rows.append([name, st.win_rate, st.loss_rate, st.draw_rate, st.half_widths()["win"], st.n])
    _write_csv(out / "fig5_test_win_rates.csv", ["variant", "win_rate", "loss_rate", "draw_rate", "win_hw", "games"],
               test_rows)
    matrix = []
    names = list(entrants)
    entrants["Emb-Hyb"] = (pols["Emb-Hyb"], online)
    for ra in names:
        row = [ra]
        for cb in names:
            pa, pva = entrants[ra]
            pb, pvb = entrants[cb]
            sa, _ = head_to_head(spec, pa, pb, n_games, cfg.seed + 2, pva, pvb)
            row.append(sa.win_rate)
        matrix.append(row)
    _write_csv(out / "fig7_head_to_head.csv", ["row_vs_col", *names], matrix)
    print("arena RL: " + ", ".join(f"{r[0]}={_fmt(r[1])}" for r in test_rows))


def _train_rl_signal(cfg: RunConfig, pop, g, out: Path) -> None:
    rl = cfg.rl
    variants = cfg.embed.get("variants", ["im", "id", "hyb"])
    tc = cfg.train_config()
    lam = rl.get("lambda", 0.1)
    res = conditioned_speaker_training(
        g, pop, tc, cfg.rl_config(), n_seeds=int(rl.get("seeds", 5)),
        episodes_per_listener=int(rl.get("episodes_per_listener", 100)),
        counts=tuple(rl.get("counts", (6, 4, 4))), split_seed=cfg.seed, variants=variants, lam=lam)
    rows = [[name, res.train_reward[name], res.test_reward[name]] for name in res.train_reward]
    _write_csv(out / "table3_speaker_rewards.csv", ["variant", "train_reward", "test_reward"], rows)
    print("speaker RL: " + ", ".join(f"{r[0]} test={_fmt(r[2])}" for r in rows))


# --- report ------------------------------------------------------------------------


def cmd_report(cfg: RunConfig, args) -> int:
    run = cfg.run_dir()
    rep = run / "report"
    files, gaps = {}, []
    evals = {m: _maybe_json(run / "eval" / f"{m}.json") for m in MODES}
    names = [VARIANT_NAMES[v] for v in ("im", "id", "hyb")]
    envtag = "arena" if cfg.kind == ARENA else "signal"
    iicr_name = "table1_iicr.csv" if cfg.kind == ARENA else "table2_iicr.csv"
    anchor = "Table 1 (IICR)" if cfg.kind == ARENA else "Table 2 (IICR)"
    if any(evals.values()):
        rows = [[n, *[_get(evals[m], n, "iicr") for m in MODES]] for n in names]
        _write_csv(rep / iicr_name, ["variant", *MODES], rows)
        files[iicr_name] = anchor
    for m in MODES:
        if not evals[m]:
            gaps.append(f"eval/{m}.json")
    if cfg.kind == ARENA and any(evals.values()):
        rows = [[n, *[_get(evals[m], n, "accuracy") for m in MODES], *[_get(evals[m], n, "majority") for m in MODES]]
                for n in names]
        _write_csv(rep / "table1_outcome_accuracy.csv",
                   ["variant", *MODES, *[f"majority_{m}" for m in MODES]], rows)
        files["table1_outcome_accuracy.csv"] = "Table 1 (Acc)"
    for m in MODES:
        src = run / "eval" / f"pca_{m}.csv"
        name = f"fig4_pca_{envtag}_{m}.csv"
        if src.exists():
            (rep / name).parent.mkdir(parents=True, exist_ok=True)
            (rep / name).write_bytes(src.read_bytes())
            files[name] = f"Fig. 4 ({envtag}, {m})"
        else:
            gaps.append(f"eval/pca_{m}.csv")
    for m in MODES:
        src = run / "models" / m / "lambda_selection.csv"
        if src.exists():
            name = f"lambda_selection_{m}.csv"
            (rep / name).write_bytes(src.read_bytes())
            files[name] = "lambda grid selection"
    rl_files = ({"fig5_curves.csv": "Fig. 5 (curves)", "fig5_test_win_rates.csv": "Fig. 5 (test win rates)",
                 "fig6_head_to_head_curve.csv": "Fig. 6", "fig7_head_to_head.csv": "Fig. 7"}
                if cfg.kind == ARENA else {"table3_speaker_rewards.csv": "Table 3"})
    for name, anc in rl_files.items():
        src = run / "rl" / name
        if src.exists():
            rep.mkdir(parents=True, exist_ok=True)
            (rep / name).write_bytes(src.read_bytes())
            files[name] = anc
        else:
            gaps.append(f"rl/{name}")
    _write_json(rep / "manifest.json", {"files": files, "gaps": sorted(gaps)})
    print(f"report: {len(files)} artifacts, {len(gaps)} gaps")
    if gaps:
        log.warning("report is partial; missing: %s", ", ".join(sorted(gaps)))
    return 0


def _maybe_json(path: Path):
    if not path.exists():
        return None
    with open(path) as fh:
        return json.load(fh)


def _get(ev, name, key):
    if not ev or name not in ev or key not in ev[name]:
        return ""
    return ev[name][key]


# --- entry point -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polemb", description="Policy-embedding experiment pipeline",
                                formatter_class=argparse.RawDescriptionHelpFormatter, epilog=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True, help="run config (YAML)")
        s.add_argument("--output-dir", help="override output_dir from the config")
        s.add_argument("--seed", type=int, help="override the global seed")
        s.set_defaults(func=fn)
        return s

    add("gen-population", cmd_gen_population, "write the scripted population")
    add("collect", cmd_collect, "roll out episodes on every graph edge")
    s = add("split", cmd_split, "weak or strong generalisation split")
    s.add_argument("--mode", choices=MODES, default="weak")
    s.add_argument("--counts", help="strong split node counts, e.g. 15,5,5")
    s.add_argument("--train-fraction", type=float, help="weak split train edge fraction")
    s = add("train-embed", cmd_train_embed, "train embedding variants and select lambda")
    s.add_argument("--mode", choices=MODES, default="weak")
    s.add_argument("--lambda-grid", help="comma-separated lambda values")
    s = add("eval-embed", cmd_eval_embed, "IICR, outcome prediction and PCA export")
    s.add_argument("--mode", choices=MODES, default="weak")
    add("train-rl", cmd_train_rl, "embedding-conditioned policy optimisation")
    add("report", cmd_report, "collate report CSVs")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = RunConfig.load(args.config)
        if args.output_dir:
            cfg.output_dir = args.output_dir
        if args.seed is not None:
            cfg.seed = args.seed
        rc = args.func(cfg, args)
        return int(rc or 0)
    except (ConfigError, SplitError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, TrainingError, FloatingPointError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except PolembError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
