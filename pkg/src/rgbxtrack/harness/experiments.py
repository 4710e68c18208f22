"""Named ablation rows, held-out evaluation sets and framework comparisons."""
from __future__ import annotations

import copy

import numpy as np

from ..config import FRAMEWORKS, RunConfig, set_dotted
from ..errors import ConfigError
from ..model import TrackerBase
from ..tokenizer import Frame
from .metrics import metrics
from .synthetic import make_dataset
from .tracker import track_many
from .variants import build_variant

EVAL_SEED_OFFSET = 10_000

# Each row: config overrides plus whether evaluation feeds RGB to both inputs.
ABLATIONS: dict[str, dict] = {
    "framework.compact": {"set": {"model.framework": "compact"}},
    "framework.dual_symmetric": {"set": {"model.framework": "dual_symmetric"}},
    "framework.dual_asymmetric": {"set": {"model.framework": "dual_asymmetric"}},
    "scm.baseline": {"set": {"model.scm_variant": "baseline"}},
    "scm.no_queries": {"set": {"model.scm_variant": "no_queries"}},
    "scm.self_attention": {"set": {"model.scm_variant": "self_attention"}},
    "scm.unshared_embedding": {"set": {"model.scm_variant": "unshared_embedding"}},
    "tcm.none": {"set": {"model.use_tcm": False}},
    "tcm.roi": {"set": {"model.tcm_mode": "roi"}},
    "tcm.query": {"set": {"model.tcm_mode": "query"}},
    "tcm.h_i_only": {"set": {"model.tcm_mode": "h_i_only"}},
    "tcm.h_f_only": {"set": {"model.tcm_mode": "h_f_only"}},
    "tcm.combined": {"set": {"model.tcm_mode": "combined"}},
    "input.rgb_x": {"set": {}, "eval_scenarios": ["x_advantage"]},
    "input.rgb_only": {"set": {}, "rgb_only": True, "eval_scenarios": ["x_advantage"]},
}


def ablation_config(row: str, base: RunConfig) -> tuple[RunConfig, dict]:
    if row not in ABLATIONS:
        raise ConfigError(f"ablation: unknown row {row!r}; choose from {sorted(ABLATIONS)}")
    entry = ABLATIONS[row]
    cfg = copy.deepcopy(base)
    for key, value in entry["set"].items():
        set_dotted(cfg, key, value)
    if "eval_scenarios" in entry:
        cfg.data.eval_scenarios = list(entry["eval_scenarios"])
    return cfg.validate(), entry


def train_set(cfg: RunConfig) -> list[list[Frame]]:
    return make_dataset(cfg.data, cfg.data.train_sequences, cfg.data.train_length, cfg.seed)


def eval_set(cfg: RunConfig, scenario: str, n: int | None = None) -> list[list[Frame]]:
    """Held-out sequences of one scenario kind; disjoint seed stream from training."""
    n = cfg.data.eval_sequences if n is None else n
    return make_dataset(cfg.data, n, cfg.data.eval_length, EVAL_SEED_OFFSET + cfg.seed,
                        kinds=[scenario])


def evaluate(model: TrackerBase, cfg: RunConfig, scenarios: list[str] | None = None,
             rgb_only: bool = False, n: int | None = None) -> dict[str, dict]:
    scenarios = scenarios or cfg.data.eval_scenarios
    return {kind: metrics(track_many(model, eval_set(cfg, kind, n), cfg.track, rgb_only))
            for kind in scenarios}


def census_table(cfg: RunConfig) -> list[dict]:
    """Parameter census of every framework at the same model dimensions."""
    rows = []
    for kind in FRAMEWORKS:
        mcfg = copy.deepcopy(cfg.model)
        mcfg.framework = kind
        _, census = build_variant(kind, mcfg, np.random.default_rng(mcfg.init_seed))
        rows.append({"framework": kind, **census})
    return rows


def sequence_length_table(cfg: RunConfig, n_q_values=(0, 2, 4)) -> list[dict]:
    """Backbone input length per framework, measured on a forward pass."""
    from ..model import SearchInputs
    from ..numcore import no_grad

    m = cfg.model
    z = np.zeros((3, m.template_size, m.template_size))
    s = np.zeros((3, m.search_size, m.search_size))
    inputs = SearchInputs(z, z, z, z, s, s)
    rows = []
    for n_q in n_q_values:
        for kind in FRAMEWORKS:
            mcfg = copy.deepcopy(m)
            mcfg.framework, mcfg.n_q = kind, n_q
            model, _ = build_variant(kind, mcfg, np.random.default_rng(mcfg.init_seed))
            with no_grad():
                length = model.spatial(inputs).backbone_len
            expected = 2 * n_q + m.n_zs if kind == "compact" else 2 * m.n_zs
            rows.append({"framework": kind, "n_q": n_q, "backbone_len": length,
                         "expected": expected})
    return rows
