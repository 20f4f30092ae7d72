"""End-to-end pipeline: split -> extract -> embed -> build -> engines -> eval.

One JSON config file drives everything. Each stage records content hashes
of its inputs and outputs in the run manifest; a stage whose inputs are
unchanged and whose outputs still match is skipped on rerun (``--force``
overrides). All stage randomness derives from the single global seed via
``seed_for(seed, stage_name)``.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from . import __version__
from . import gnn as gnn_mod
from . import label_prop as lp_mod
from . import novelty as novelty_mod
from .dataset import Corpus, load_corpus, load_viewpoints, save_corpus, save_viewpoints, split_corpus
from .embedding import EmbeddingMatrix, EmbeddingProvider, embed, load_embeddings, save_embeddings
from .graph import GraphConfig, ViewpointGraph, build_graph, load_graph, save_graph
from .llm import LlmBackend, extract_corpus
from .metrics import MetricReport, confusion, format_table, macro_metrics

ENGINES = ("lp", "gnn", "both")


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("invalid config:\n" + "\n".join(f"  {e}" for e in errors))


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception, manifest: dict):
        self.stage = stage
        self.cause = cause
        self.manifest = manifest
        super().__init__(f"stage {stage!r} failed: {cause}")


@dataclass
class SplitSettings:
    fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)


@dataclass
class LlmSettings:
    backend: str = "mock"
    endpoint: str = ""
    model: str = ""
    temperature: float = 0.1
    max_retries: int = 3
    price_per_million: float = 0.0
    relations: bool = False
    max_inflight: int = 4


@dataclass
class EmbeddingSettings:
    provider: str = "stub"
    dimension: int = 32
    endpoint: str = ""
    model: str = ""


@dataclass
class GraphSettings:
    k: int = 5
    m: int = 10
    weight_floor: float = 0.0
    hybrid: bool = False


@dataclass
class LpSettings:
    max_iters: int = 5
    early_stop: bool = True


@dataclass
class GnnSettings:
    layers: int = 2
    hidden_dim: int = 64
    batch_size: int = 64
    max_epochs: int = 1000
    learning_rate: float = 1e-3
    class_weighting: bool = False


@dataclass
class NoveltySettings:
    enabled: bool = False
    count: int = 80
    train_subset: int = 10
    threshold: int = 1
    swap_fraction: float = 0.5


@dataclass
class RunConfig:
    corpus: str = "corpus.jsonl"
    out_dir: str = "run"
    seed: int = 0
    engine: str = "lp"
    split: SplitSettings = field(default_factory=SplitSettings)
    llm: LlmSettings = field(default_factory=LlmSettings)
    embedding: EmbeddingSettings = field(default_factory=EmbeddingSettings)
    graph: GraphSettings = field(default_factory=GraphSettings)
    lp: LpSettings = field(default_factory=LpSettings)
    gnn: GnnSettings = field(default_factory=GnnSettings)
    novelty: NoveltySettings = field(default_factory=NoveltySettings)


_SECTIONS = {
    "split": SplitSettings,
    "llm": LlmSettings,
    "embedding": EmbeddingSettings,
    "graph": GraphSettings,
    "lp": LpSettings,
    "gnn": GnnSettings,
    "novelty": NoveltySettings,
}
_SCALARS = ("corpus", "out_dir", "seed", "engine")


def validate_config(source) -> RunConfig:
    """Build a RunConfig from a dict or JSON file path.

    Missing keys get the defaults; every violation is reported with its
    dotted path into the config.
    """
    if isinstance(source, (str, Path)):
        data = json.loads(Path(source).read_text(encoding="utf-8"))
    else:
        data = dict(source or {})
    errors: list[str] = []
    config = RunConfig()

    for key in data:
        if key not in _SCALARS and key not in _SECTIONS:
            errors.append(f"{key}: unknown key")

    for key in _SCALARS:
        if key in data:
            setattr(config, key, data[key])
    if not isinstance(config.seed, int):
        errors.append(f"seed: must be an integer, got {config.seed!r}")
    if config.engine not in ENGINES:
        errors.append(f"engine: must be one of {ENGINES}, got {config.engine!r}")

    for section, cls in _SECTIONS.items():
        raw = data.get(section, {})
        if not isinstance(raw, dict):
            errors.append(f"{section}: must be an object")
            continue
        settings = getattr(config, section)
        for key, value in raw.items():
            if not hasattr(settings, key):
                errors.append(f"{section}.{key}: unknown key")
            else:
                setattr(settings, key, value)

    s = config.split
    if len(tuple(s.fractions)) != 3:
        errors.append(f"split.fractions: need 3 values, got {list(s.fractions)}")
    elif abs(sum(s.fractions) - 1.0) > 1e-9:
        errors.append(f"split.fractions: must sum to 1, got {sum(s.fractions)}")
    elif any(f < 0 for f in s.fractions):
        errors.append(f"split.fractions: must be non-negative, got {list(s.fractions)}")

    if config.llm.backend not in ("mock", "remote"):
        errors.append(f"llm.backend: must be mock or remote, got {config.llm.backend!r}")
    if not (0.0 <= config.llm.temperature <= 2.0):
        errors.append(f"llm.temperature: must be in [0, 2], got {config.llm.temperature}")
    if config.llm.max_retries < 1:
        errors.append(f"llm.max_retries: must be >= 1, got {config.llm.max_retries}")

    if config.embedding.provider not in ("stub", "remote"):
        errors.append(f"embedding.provider: must be stub or remote, got {config.embedding.provider!r}")
    if config.embedding.dimension < 2:
        errors.append(f"embedding.dimension: must be >= 2, got {config.embedding.dimension}")

    if config.graph.k < 1:
        errors.append(f"graph.k: must be >= 1, got {config.graph.k}")
    if config.graph.m < 0:
        errors.append(f"graph.m: must be >= 0, got {config.graph.m}")
    if not (0.0 <= config.graph.weight_floor <= 1.0):
        errors.append(f"graph.weight_floor: must be in [0, 1], got {config.graph.weight_floor}")
    if config.graph.hybrid and not config.llm.relations:
        errors.append("graph.hybrid: requires llm.relations to be enabled")

    if config.lp.max_iters < 1:
        errors.append(f"lp.max_iters: must be >= 1, got {config.lp.max_iters}")

    g = config.gnn
    for key in ("layers", "hidden_dim", "batch_size", "max_epochs"):
        if getattr(g, key) < 1:
            errors.append(f"gnn.{key}: must be >= 1, got {getattr(g, key)}")
    if g.learning_rate <= 0:
        errors.append(f"gnn.learning_rate: must be > 0, got {g.learning_rate}")

    nv = config.novelty
    if nv.count < 1:
        errors.append(f"novelty.count: must be >= 1, got {nv.count}")
    if nv.train_subset < 0:
        errors.append(f"novelty.train_subset: must be >= 0, got {nv.train_subset}")
    if not (0.0 < nv.swap_fraction <= 1.0):
        errors.append(f"novelty.swap_fraction: must be in (0, 1], got {nv.swap_fraction}")
    if nv.threshold < 0:
        errors.append(f"novelty.threshold: must be >= 0, got {nv.threshold}")

    if errors:
        raise ConfigError(errors)
    config.split.fractions = tuple(float(f) for f in config.split.fractions)
    return config


def seed_for(seed: int, stage: str) -> int:
    """Documented per-stage sub-seed derived from the global seed."""
    digest = hashlib.sha256(f"{seed}:{stage}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def file_hash(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def dict_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode("utf-8")).hexdigest()


def make_backend(cfg: LlmSettings, seed: int) -> LlmBackend:
    return LlmBackend(
        kind=cfg.backend,
        endpoint=cfg.endpoint,
        model=cfg.model,
        temperature=cfg.temperature,
        max_retries=cfg.max_retries,
        price_per_million=cfg.price_per_million,
        seed=seed,
        max_inflight=cfg.max_inflight,
    )


def make_provider(cfg: EmbeddingSettings) -> EmbeddingProvider:
    return EmbeddingProvider(
        kind=cfg.provider, dimension=cfg.dimension, endpoint=cfg.endpoint, model=cfg.model
    )


def graph_config(cfg: GraphSettings) -> GraphConfig:
    return GraphConfig(intra_k=cfg.k, inter_m=cfg.m, weight_floor=cfg.weight_floor)


def evaluate_predictions(pred_path: Path, corpus: Corpus) -> MetricReport:
    """Score a predictions file against the corpus labels; unlabeled ideas
    are skipped."""
    truths, preds = [], []
    with Path(pred_path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            idea = corpus.by_id(obj["id"])
            if idea.label is None:
                continue
            truths.append(idea.label)
            preds.append(corpus.label_set.index_of(obj["label"]))
    if not truths:
        raise ValueError(f"no labeled ideas among predictions in {pred_path}")
    return macro_metrics(confusion(truths, preds, corpus.label_set.labels))


def _training_inputs(
    config: RunConfig, paths: dict[str, Path]
) -> tuple[ViewpointGraph, EmbeddingMatrix, Corpus, list]:
    """Load graph/matrix/corpus; inject training negatives when enabled."""
    corpus = load_corpus(paths["split"])
    graph = load_graph(paths["graph"])
    matrix, _ = load_embeddings(paths["embeddings"])
    negatives = []
    if config.novelty.enabled:
        negatives = novelty_mod.load_negatives(paths["negatives"])
        graph, matrix = novelty_mod.inject_negatives(graph, matrix, negatives, corpus)
    return graph, matrix, corpus, negatives


def run_pipeline(config: RunConfig, force: bool = False, quiet: bool = False) -> dict:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / "run_manifest.json"
    previous: dict = {}
    if manifest_path.exists():
        try:
            previous = json.loads(manifest_path.read_text(encoding="utf-8"))
        except (json.JSONDecodeError, OSError):
            previous = {}
    prev_stages = {s["name"]: s for s in previous.get("stages", [])}

    manifest: dict = {
        "version": __version__,
        "config": asdict(config),
        "stages": [],
        "summary": {},
    }

    paths = {
        "corpus": Path(config.corpus),
        "split": out / "split.jsonl",
        "viewpoints": out / "viewpoints.jsonl",
        "embeddings": out / "embeddings.bin",
        "graph": out / "graph.json",
        "negatives": out / "negatives.jsonl",
        "negatives_holdout": out / "negatives_holdout.jsonl",
        "lp_pred": out / "predictions_lp.jsonl",
        "model": out / "model.ckpt",
        "train_log": out / "training_log.json",
        "gnn_pred": out / "predictions_gnn.jsonl",
        "report": out / "report.json",
    }

    def say(msg: str):
        if not quiet:
            print(msg)

    def stage(name: str, inputs: list[Path], cfg_snapshot, outputs: list[Path], fn):
        for p in inputs:
            if not p.exists():
                raise FileNotFoundError(f"input {p} for stage {name!r} does not exist")
        input_hashes = {str(p): file_hash(p) for p in inputs}
        input_hashes["config"] = dict_hash(cfg_snapshot)
        prev = prev_stages.get(name)
        if (
            not force
            and prev
            and prev.get("inputs") == input_hashes
            and all(p.exists() for p in outputs)
            and {str(p): file_hash(p) for p in outputs} == prev.get("outputs")
        ):
            record = dict(prev)
            record["skipped"] = True
            manifest["stages"].append(record)
            if "summary" in prev:
                manifest["summary"][name] = prev["summary"]
            say(f"[{name}] unchanged, skipped")
            return
        start = time.monotonic()
        summary = fn()
        record = {
            "name": name,
            "inputs": input_hashes,
            "outputs": {str(p): file_hash(p) for p in outputs},
            "seconds": round(time.monotonic() - start, 4),
            "skipped": False,
        }
        if summary is not None:
            record["summary"] = summary
            manifest["summary"][name] = summary
        manifest["stages"].append(record)
        say(f"[{name}] done in {record['seconds']}s")

    def do_split():
        corpus = load_corpus(paths["corpus"])
        if all(i.split is not None for i in corpus.ideas):
            save_corpus(corpus, paths["split"])  # already split: canonicalize only
            return {"passthrough": True}
        split = split_corpus(corpus, config.split.fractions, config.seed)
        save_corpus(split, paths["split"])
        return {
            "train": len(split.split_ideas("train")),
            "validation": len(split.split_ideas("validation")),
            "test": len(split.split_ideas("test")),
        }

    def do_extract():
        corpus = load_corpus(paths["split"])
        backend = make_backend(config.llm, seed_for(config.seed, "extract"))
        records, summary = extract_corpus(corpus.ideas, backend, relations=config.llm.relations)
        save_viewpoints(records, paths["viewpoints"])
        return summary

    def do_embed():
        records = load_viewpoints(paths["viewpoints"])
        texts = [v for r in records for v in r.viewpoints]
        ids = [f"{r.idea_id}:{j}" for r in records for j in range(len(r.viewpoints))]
        provider = make_provider(config.embedding)
        matrix = embed(texts, provider)
        save_embeddings(matrix, ids, paths["embeddings"])
        return {"count": len(matrix), "dimension": matrix.dimension}

    def do_build():
        records = load_viewpoints(paths["viewpoints"])
        matrix, _ = load_embeddings(paths["embeddings"])
        graph = build_graph(records, matrix, graph_config(config.graph), hybrid=config.graph.hybrid)
        save_graph(graph, paths["graph"])
        return {"nodes": len(graph), "edges": len(graph.edges)}

    def do_negatives():
        corpus = load_corpus(paths["split"])
        graph = load_graph(paths["graph"])
        samples, fallbacks = novelty_mod.generate_negatives(
            corpus,
            graph,
            count=config.novelty.count,
            threshold=config.novelty.threshold,
            swap_fraction=config.novelty.swap_fraction,
            seed=seed_for(config.seed, "negatives"),
        )
        train, rest = novelty_mod.select_training_negatives(
            samples, config.novelty.train_subset, seed=seed_for(config.seed, "negatives")
        )
        novelty_mod.save_negatives(train, paths["negatives"])
        novelty_mod.save_negatives(rest, paths["negatives_holdout"])
        return {"generated": len(samples), "training": len(train), "fallbacks": fallbacks}

    def do_lp():
        corpus = load_corpus(paths["split"])
        graph = load_graph(paths["graph"])
        lp_config = lp_mod.LpConfig(
            max_iters=config.lp.max_iters, early_stop=config.lp.early_stop
        )
        predictions = lp_mod.run(graph, corpus, lp_config)
        lp_mod.save_predictions(predictions, corpus, paths["lp_pred"])
        return {"predicted": len(predictions), "unreached": sum(p.unreached for p in predictions)}

    def do_train():
        graph, matrix, corpus, negatives = _training_inputs(config, paths)
        gnn_config = gnn_mod.GnnConfig(
            layers=config.gnn.layers,
            hidden_dim=config.gnn.hidden_dim,
            batch_size=config.gnn.batch_size,
            max_epochs=config.gnn.max_epochs,
            learning_rate=config.gnn.learning_rate,
            seed=seed_for(config.seed, "train"),
            class_weighting=config.gnn.class_weighting,
        )
        result = gnn_mod.train(gnn_config, graph, matrix, corpus, negatives or None)
        gnn_mod.save_model(
            result.model,
            paths["model"],
            gnn_config,
            corpus.label_set.labels,
            epoch=result.best_epoch,
            validation_score=result.best_val_f1,
        )
        paths["train_log"].write_text(json.dumps(result.log), encoding="utf-8")
        last = result.log[-1]
        return {
            "epochs": len(result.log),
            "final_loss": last["loss"],
            "best_val_f1": result.best_val_f1,
        }

    def do_predict():
        graph, matrix, corpus, _ = _training_inputs(config, paths)
        model, _header = gnn_mod.load_model(paths["model"])
        predictions = gnn_mod.predict(model, graph, matrix, corpus, split="test")
        gnn_mod.save_predictions(predictions, corpus, paths["gnn_pred"])
        return {"predicted": len(predictions)}

    def do_eval():
        corpus = load_corpus(paths["split"])
        report: dict = {}
        table_rows = {}
        extract_summary = manifest["summary"].get("extract", {})
        avg_cost = extract_summary.get("avg_cost_per_evaluation")
        avg_tokens = extract_summary.get("avg_tokens_per_evaluation")
        for engine, pred_path in (("lp", paths["lp_pred"]), ("gnn", paths["gnn_pred"])):
            if config.engine not in (engine, "both"):
                continue
            rep = evaluate_predictions(pred_path, corpus)
            rep.avg_token_cost = avg_tokens
            report[engine] = rep.to_dict()
            table_rows[engine] = rep
        if avg_cost is not None:
            report["extraction"] = {
                "avg_tokens_per_evaluation": avg_tokens,
                "avg_cost_per_evaluation": avg_cost,
            }
        paths["report"].write_text(json.dumps(report), encoding="utf-8")
        if table_rows:
            say(format_table(table_rows))
        return {k: report[k]["macro_f1"] for k in table_rows}

    plan: list[tuple] = [
        ("split", [paths["corpus"]], {"fractions": list(config.split.fractions), "seed": config.seed}, [paths["split"]], do_split),
        ("extract", [paths["split"]], {**asdict(config.llm), "seed": config.seed}, [paths["viewpoints"]], do_extract),
        ("embed", [paths["viewpoints"]], asdict(config.embedding), [paths["embeddings"]], do_embed),
        ("build", [paths["viewpoints"], paths["embeddings"]], asdict(config.graph), [paths["graph"]], do_build),
    ]
    if config.novelty.enabled:
        plan.append(
            ("gen-negatives", [paths["split"], paths["graph"]], {**asdict(config.novelty), "seed": config.seed}, [paths["negatives"], paths["negatives_holdout"]], do_negatives)
        )
    if config.engine in ("lp", "both"):
        plan.append(("lp", [paths["graph"], paths["split"]], asdict(config.lp), [paths["lp_pred"]], do_lp))
    if config.engine in ("gnn", "both"):
        train_inputs = [paths["graph"], paths["split"], paths["embeddings"]]
        if config.novelty.enabled:
            train_inputs.append(paths["negatives"])
        plan.append(("train", train_inputs, {**asdict(config.gnn), "seed": config.seed, "novelty": config.novelty.enabled}, [paths["model"], paths["train_log"]], do_train))
        plan.append(("predict", train_inputs + [paths["model"]], {}, [paths["gnn_pred"]], do_predict))
    eval_inputs = [paths["split"]]
    if config.engine in ("lp", "both"):
        eval_inputs.append(paths["lp_pred"])
    if config.engine in ("gnn", "both"):
        eval_inputs.append(paths["gnn_pred"])
    plan.append(("eval", eval_inputs, {"engine": config.engine}, [paths["report"]], do_eval))

    for name, inputs, cfg_snapshot, outputs, fn in plan:
        try:
            stage(name, inputs, cfg_snapshot, outputs, fn)
        except Exception as exc:
            manifest["failed_stage"] = {"name": name, "error": str(exc)}
            manifest_path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
            raise StageError(name, exc, manifest) from exc

    manifest_path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return manifest
