"""Command-line pipeline: prepare, sample, train, evaluate, analyze, gradcheck.

Settings come from defaults, then an optional ``key = value`` config file
(``--config``), then command-line flags. Every stage reads and writes plain
files under ``out_dir``::

    dataset.txt  train.txt  test.txt  hist_user.csv  hist_item.csv      prepare
    tables/{user,item,user2,item2}.txt  relevance_mf.bin                sample
    model.bin  curve.csv  timing.csv                                    train
    eval.csv  eval.txt                                                  evaluate
    attention.csv  sweep.csv  sweep_t<t>/                               analyze
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import time
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

from . import __version__
from .data import (
    ColumnSpec,
    RatingScale,
    feedback_histogram,
    load_dataset,
    parse_ratings,
    save_dataset,
    serialize_ratings,
    split_train_test,
    synthetic_ratings,
    write_histogram_csv,
)
from .evaluation import attention_by_rating, attention_pairs, full_report
from .graph import build_graph
from .model import ModelKind, load_params, save_params
from .sampling import FeedbackTables, SamplePolicy, load_table, save_table
from .sampling import pretrain_relevance_embeddings, sample_random, sample_relevance, step_two_tables
from .trainer import TrainConfig, TrainingDiverged, train
from .weighting import ConfigError

log = logging.getLogger("graphcf")

TOY_DATASET = "toy"


@dataclass
class ExperimentConfig:
    data: str = TOY_DATASET
    delimiter: str = ","
    user_col: int = 0
    item_col: int = 1
    rating_col: int = 2
    skip_header: bool = False
    min_raw: int = 1
    max_raw: int = 5
    train_fraction: float = 0.8
    split_seed: int = 0
    model_kind: str = "A_GCF"
    sampling: str = "random"
    k: int = 20
    sample_seed: int = 0
    exclude_self: bool = False
    pretrain_epochs: int = 20
    K: int = 16
    learning_rate: float = 0.05
    optimizer: str = "sgd"
    epochs: int = 20
    batch_size: int = 256
    l2: float = 1e-4
    l2_weight: float = 1e-4
    temperature: float = 0.1
    hidden: tuple = (32,)
    norm: str = "sqrt_k"
    output: str = "logistic"
    mask_pad: bool = False
    init_scale: float = 0.01
    mlp_init: str = "uniform"
    weight_init: str = "uniform"
    checkpoint_every: int = 0
    train_seed: int = 0
    thresholds: tuple = (10, 15)
    sweep_temperatures: tuple = ()
    out_dir: str = "runs/default"

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must be in (0, 1)")
        if self.sampling not in ("random", "relevance"):
            raise ConfigError(f"unknown sampling policy {self.sampling!r}; valid: random, relevance")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if any(t <= 0 for t in self.sweep_temperatures):
            raise ConfigError("sweep temperatures must be positive")
        self.model_kind = ModelKind.parse(self.model_kind).value
        RatingScale(self.min_raw, self.max_raw)
        self.train_config()

    @property
    def out(self):
        return Path(self.out_dir)

    def column_spec(self):
        return ColumnSpec(self.delimiter, self.user_col, self.item_col, self.rating_col, self.skip_header)

    def scale(self):
        return RatingScale(self.min_raw, self.max_raw)

    def train_config(self, **changes):
        cfg = TrainConfig(
            model_kind=self.model_kind, K=self.K, k=self.k, learning_rate=self.learning_rate,
            optimizer=self.optimizer, epochs=self.epochs, batch_size=self.batch_size, l2=self.l2, l2_weight=self.l2_weight,
            temperature=self.temperature, hidden=self.hidden, seed=self.train_seed, sampling=self.sampling,
            norm=self.norm, output=self.output, mask_pad=self.mask_pad, init_scale=self.init_scale,
            mlp_init=self.mlp_init, weight_init=self.weight_init, checkpoint_every=self.checkpoint_every,
            checkpoint_path=str(self.out / "model.bin") if self.checkpoint_every else None,
        )
        return cfg.replace(**changes) if changes else cfg


HELP = {
    "data": f"ratings file, or '{TOY_DATASET}' for the bundled toy set",
    "delimiter": "field separator (use '::' for MovieLens .dat, '\\t' for tab)",
    "skip_header": "skip the first line of the ratings file",
    "min_raw": "lowest raw rating",
    "max_raw": "highest raw rating",
    "train_fraction": "share of records in the training split",
    "model_kind": "one of " + ", ".join(k.value for k in ModelKind),
    "sampling": "step-one feedback policy: random or relevance",
    "k": "feedback row width",
    "exclude_self": "drop the entity itself from its step-two candidates",
    "pretrain_epochs": "MF epochs before relevance sampling",
    "K": "embedding width (feedback embeddings share it)",
    "optimizer": "sgd or adam",
    "l2": "L2 strength on embeddings",
    "l2_weight": "L2 strength on W-GCF pair-weight factors",
    "temperature": "attention softmax temperature",
    "hidden": "attention MLP hidden widths, comma separated",
    "norm": "uniform aggregation weight: sqrt_k, mean or degree",
    "output": "output transform: logistic or clamp",
    "mask_pad": "give PAD entries zero attention",
    "init_scale": "half-width of the uniform initialization",
    "mlp_init": "attention MLP initialization: uniform or he",
    "weight_init": "W-GCF factor initialization: uniform or sqrt_k",
    "checkpoint_every": "write model.bin every N epochs (0: only at the end)",
    "thresholds": "sparse-user slice thresholds, comma separated",
    "sweep_temperatures": "analyze: retrain and analyze once per temperature",
    "out_dir": "directory for every artifact",
}


def _field_types():
    return {f.name: f for f in fields(ExperimentConfig)}


def _convert(name, text):
    f = _field_types()[name]
    default = f.default
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, tuple):
            cast = float if name == "sweep_temperatures" else int
            return tuple(cast(v) for v in text.split(",") if v.strip())
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {text!r}") from None
    if name == "delimiter":
        return text.encode().decode("unicode_escape") if text else ","
    return text


def read_config_file(path):
    """``key = value`` lines; ``#`` starts a comment."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    known = _field_types()
    out = {}
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"{path}:{n}: unknown setting {key!r}")
        out[key] = _convert(key, value)
    return out


def write_config(cfg, path):
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(map(str, v))
        elif f.name == "delimiter":
            v = v.encode("unicode_escape").decode()
        lines.append(f"{f.name} = {v}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _add_config_args(p):
    p.add_argument("--config", help="key = value settings file")
    for f in fields(ExperimentConfig):
        default = f.default
        shown = ",".join(map(str, default)) if isinstance(default, tuple) else default
        text = HELP.get(f.name, f.name.replace("_", " "))
        p.add_argument(f"--{f.name}", dest=f.name, default=None, metavar="V",
                       help=f"{text} (default: {shown!s})".replace("%", "%%"))


def build_config(ns):
    values = {}
    if getattr(ns, "config", None):
        values.update(read_config_file(ns.config))
    for f in fields(ExperimentConfig):
        raw = getattr(ns, f.name, None)
        if raw is not None:
            values[f.name] = _convert(f.name, raw)
    return ExperimentConfig(**values)


def _toy_path():
    return resources.files("graphcf").joinpath("data/toy_ratings.csv")


def _require(path, stage):
    if not Path(path).exists():
        raise FileNotFoundError(f"{path} not found; run '{stage}' first")


# ----------------------------------------------------------------------------- stages

def cmd_prepare(cfg):
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    if cfg.data == TOY_DATASET:
        with resources.as_file(_toy_path()) as p:
            ds = parse_ratings(p, ColumnSpec(), cfg.scale())
    else:
        if not Path(cfg.data).exists():
            raise FileNotFoundError(f"ratings file not found: {cfg.data}")
        ds = parse_ratings(cfg.data, cfg.column_spec(), cfg.scale())
    split = split_train_test(ds, cfg.train_fraction, cfg.split_seed)
    save_dataset(ds, out / "dataset.txt")
    save_dataset(split.train, out / "train.txt")
    save_dataset(split.test, out / "test.txt")
    for side in ("user", "item"):
        write_histogram_csv(feedback_histogram(split.train, side), out / f"hist_{side}.csv")
    write_config(cfg, out / "config.txt")
    log.info("prepared %d records (%d train, %d test) in %s", len(ds), len(split.train), len(split.test), out)
    return split


def _load_split(cfg):
    _require(cfg.out / "train.txt", "prepare")
    return load_dataset(cfg.out / "train.txt"), load_dataset(cfg.out / "test.txt")


def cmd_sample(cfg):
    train_set, test = _load_split(cfg)
    g = build_graph(train_set)
    tdir = cfg.out / "tables"
    tdir.mkdir(parents=True, exist_ok=True)
    if cfg.sampling == "relevance":
        mf_cfg = cfg.train_config(model_kind="MF", epochs=cfg.pretrain_epochs, checkpoint_every=0, checkpoint_path=None)
        mf = pretrain_relevance_embeddings(train_set, mf_cfg)
        save_params(mf, cfg.out / "relevance_mf.bin")
        user, item = sample_relevance(g, "user", mf, cfg.k), sample_relevance(g, "item", mf, cfg.k)
    else:
        policy = SamplePolicy("random", cfg.sample_seed, cfg.k)
        user, item = sample_random(g, "user", policy), sample_random(g, "item", policy)
    save_table(user, tdir / "user.txt")
    save_table(item, tdir / "item.txt")
    if ModelKind.parse(cfg.model_kind).step_two:
        user2, item2 = step_two_tables(g, user, item, cfg.k, cfg.sample_seed, cfg.exclude_self)
        save_table(user2, tdir / "user2.txt")
        save_table(item2, tdir / "item2.txt")
    log.info("sampled %s feedback tables into %s", cfg.sampling, tdir)


def _load_tables(cfg, train_set):
    tdir = cfg.out / "tables"
    kind = ModelKind.parse(cfg.model_kind)
    loaded = {}
    for slot in ("user", "item", "user2", "item2"):
        path = tdir / f"{slot}.txt"
        if slot in kind.feedback_slots:
            _require(path, "sample")
        loaded[slot] = load_table(path) if path.exists() else None
    g = build_graph(train_set)
    return FeedbackTables(**loaded, user_degree=g.user_degree, item_degree=g.item_degree), g


def _fit(cfg, out):
    train_set, test = _load_split(cfg)
    tables, _ = _load_tables(cfg, train_set)
    out.mkdir(parents=True, exist_ok=True)
    tcfg = cfg.train_config(checkpoint_path=str(out / "model.bin") if cfg.checkpoint_every else None)
    params, report = train(train_set, tables, tcfg, test=test)
    save_params(params, out / "model.bin")
    report.to_csv(out / "curve.csv", with_time=False)
    with open(out / "timing.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,seconds\n" + "".join(f"{e + 1},{s:.3f}\n" for e, s in enumerate(report.seconds)))
    return params, report


def cmd_train(cfg):
    _, report = _fit(cfg, cfg.out)
    final = report.test_rmse[-1] if len(report) else float("nan")
    log.info("trained %s for %d epochs, final test RMSE %.6f", cfg.model_kind, len(report), final)


def _load_model(cfg, out):
    path = out / "model.bin"
    _require(path, "train")
    params = load_params(path)
    if params.kind.value != ModelKind.parse(cfg.model_kind).value:
        raise ConfigError(f"{path} holds a {params.kind.value} model but model_kind is {cfg.model_kind}")
    return params


def cmd_evaluate(cfg):
    train_set, test = _load_split(cfg)
    params = _load_model(cfg, cfg.out)
    tables, g = _load_tables(cfg, train_set)
    report = full_report(params, tables, test, g, cfg.thresholds)
    report.to_csv(cfg.out / "eval.csv")
    (cfg.out / "eval.txt").write_text(report.summary() + "\n", encoding="utf-8")
    print(report.summary())
    return report


def _write_attention(groups, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("side,rating,count,mean_attention\n")
        for side, rows in groups.items():
            for r in rows:
                fh.write(f"{side},{r.rating},{r.count},{'' if r.mean is None else repr(r.mean)}\n")


def cmd_analyze(cfg):
    if ModelKind.parse(cfg.model_kind).weighting != "attentive":
        raise ConfigError(f"{cfg.model_kind} has no attention network to analyze")
    train_set, _ = _load_split(cfg)
    tables, g = _load_tables(cfg, train_set)
    scale = cfg.scale().values
    results = {}
    if cfg.sweep_temperatures:
        for t in cfg.sweep_temperatures:
            sub = cfg.out / f"sweep_t{t:g}"
            run_cfg = dataclasses.replace(cfg, temperature=t)
            params, report = _fit(run_cfg, sub)
            groups = attention_by_rating(params, tables, g, scale)
            _write_attention(groups, sub / "attention.csv")
            results[t] = (groups, report)
        with open(cfg.out / "sweep.csv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write("temperature,final_test_rmse," + ",".join(f"mean_{r}" for r in scale) + "\n")
            for t, (groups, report) in results.items():
                means = ",".join("" if r.mean is None else repr(r.mean) for r in groups["pooled"])
                fh.write(f"{t!r},{report.test_rmse[-1]!r},{means}\n")
    else:
        params = _load_model(cfg, cfg.out)
        groups = attention_by_rating(params, tables, g, scale)
        _write_attention(groups, cfg.out / "attention.csv")
        attention_pairs(params, tables, g, cfg.out / "attention_pairs.csv")
        results[cfg.temperature] = (groups, None)
    for t, (groups, _) in results.items():
        cells = " ".join(f"{r.rating}:{'n/a' if r.mean is None else f'{r.mean:.5f}'}" for r in groups["pooled"])
        print(f"t={t:g} mean attention by rating {cells}")
    return results


def cmd_run(cfg):
    cmd_prepare(cfg)
    cmd_sample(cfg)
    cmd_train(cfg)
    cmd_evaluate(cfg)
    if ModelKind.parse(cfg.model_kind).weighting == "attentive":
        cmd_analyze(cfg)


def cmd_gradcheck(args):
    from .gradcheck import check_all_kinds

    start = time.perf_counter()
    worst = check_all_kinds(n_instances=args.instances, seed=args.seed, eps=args.eps)
    ok = True
    for kind, err in worst.items():
        passed = err < args.tol
        ok &= passed
        print(f"{kind:8s} max relative error {err:.3e} {'ok' if passed else 'FAIL'}")
    print(f"{args.instances} instances per kind in {time.perf_counter() - start:.1f}s")
    return 0 if ok else 1


def cmd_synth(args):
    ds = synthetic_ratings(args.users, args.items, args.records, rank=args.rank, noise=args.noise, seed=args.seed)
    Path(args.output).parent.mkdir(parents=True, exist_ok=True)
    Path(args.output).write_text("\n".join(serialize_ratings(ds)) + "\n", encoding="utf-8")
    print(f"wrote {len(ds)} ratings to {args.output}")
    return 0


STAGES = {
    "prepare": (cmd_prepare, "parse, split and write histograms"),
    "sample": (cmd_sample, "build step-one (and step-two) feedback tables"),
    "train": (cmd_train, "fit the model, write model.bin and curve.csv"),
    "evaluate": (cmd_evaluate, "overall and sparse-user RMSE"),
    "analyze": (cmd_analyze, "mean attention by rating, optional temperature sweep"),
    "run": (cmd_run, "prepare, sample, train, evaluate (and analyze) in one go"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="graphcf", description="Graph-based collaborative filtering experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, text) in STAGES.items():
        p = sub.add_parser(name, help=text, description=text)
        _add_config_args(p)
    g = sub.add_parser("gradcheck", help="finite-difference check of every model kind")
    g.add_argument("--instances", type=int, default=20, help="random instances per kind (default: 20)")
    g.add_argument("--seed", type=int, default=0, help="instance seed (default: 0)")
    g.add_argument("--eps", type=float, default=1e-5, help="central-difference step (default: 1e-05)")
    g.add_argument("--tol", type=float, default=1e-4, help="max relative error (default: 0.0001)")
    s = sub.add_parser("synth", help="write a synthetic low-rank ratings file")
    s.add_argument("output", help="destination CSV (user,item,rating)")
    s.add_argument("--users", type=int, default=943, help="(default: 943)")
    s.add_argument("--items", type=int, default=1682, help="(default: 1682)")
    s.add_argument("--records", type=int, default=100_000, help="(default: 100000)")
    s.add_argument("--rank", type=int, default=8, help="(default: 8)")
    s.add_argument("--noise", type=float, default=0.6, help="rating noise std (default: 0.6)")
    s.add_argument("--seed", type=int, default=0, help="(default: 0)")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        if args.command == "gradcheck":
            return cmd_gradcheck(args)
        if args.command == "synth":
            return cmd_synth(args)
        cfg = build_config(args)
        STAGES[args.command][0](cfg)
        return 0
    except TrainingDiverged as exc:
        print(f"graphcf {args.command}: training diverged: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ValueError, KeyError, IndexError, OSError) as exc:
        print(f"graphcf {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
