"""Declarative YAML formats for models, evidence and results.

Documents carry an explicit ``schema`` version field and reject unknown
keys.  Floats round-trip exactly (PyYAML serializes them through repr,
the shortest exact decimal form).  CIM blocks may carry any diagonal
values; diagonals are derived quantities and are ignored on input.
"""

import csv
import io
from importlib import resources

import numpy as np
import yaml

from .ctbn import BayesNetInitial, CtbnSpec, CtbnTrajectory
from .gibbs import Evidence, _forward_cbi_sample
from .lotka import build_lotka_volterra
from .markov import SamplePath

__all__ = [
    "ModelError", "parse_model", "parse_model_document", "serialize_model",
    "parse_evidence", "serialize_evidence", "write_result", "result_csv",
    "simulate_evidence", "packaged_model_text", "PACKAGED_MODELS",
]

MODEL_SCHEMA = "ctbn-model/1"
EVIDENCE_SCHEMA = "ctbn-evidence/1"
RESULT_SCHEMA = "ctbn-result/1"

PACKAGED_MODELS = ("example1", "example2", "lotka_volterra")


class ModelError(ValueError):
    """Parse or semantic error in a model/evidence document."""


def _load_yaml(text, what):
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ModelError(f"{what}: malformed YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise ModelError(f"{what}: top level must be a mapping")
    return doc


def _check_keys(mapping, path, required, optional=()):
    if not isinstance(mapping, dict):
        raise ModelError(f"{path}: expected a mapping")
    unknown = sorted(set(mapping) - set(required) - set(optional))
    if unknown:
        raise ModelError(f"{path}: unknown keys {unknown}")
    missing = sorted(set(required) - set(mapping))
    if missing:
        raise ModelError(f"{path}: missing keys {missing}")


def _parent_config_from_mapping(parents, strides, sizes, mapping, path):
    if set(mapping) != set(parents):
        raise ModelError(
            f"{path}: parent states must name exactly {list(parents)}")
    cfg = 0
    for p, stride, size in zip(parents, strides, sizes):
        s = mapping[p]
        if not isinstance(s, int) or not 0 <= s < size:
            raise ModelError(f"{path}: state for parent {p} out of range")
        cfg += s * int(stride)
    return cfg


def _config_label(parents, strides, sizes, cfg):
    out = {}
    for p, stride, size in zip(parents, strides, sizes):
        out[p] = int((cfg // int(stride)) % size)
    return out


def _parse_tabular(doc):
    _check_keys(doc, "model", ("schema", "nodes", "edges", "cims", "initial"),
                optional=("kind", "observed"))
    names = []
    sizes = []
    if not isinstance(doc["nodes"], list) or not doc["nodes"]:
        raise ModelError("nodes: expected a nonempty list")
    for i, entry in enumerate(doc["nodes"]):
        _check_keys(entry, f"nodes[{i}]", ("name", "states"))
        names.append(str(entry["name"]))
        if not isinstance(entry["states"], int) or entry["states"] < 1:
            raise ModelError(f"nodes[{i}].states: need a positive state count")
        sizes.append(entry["states"])
    edges = []
    for i, pair in enumerate(doc["edges"] or []):
        if not (isinstance(pair, list) and len(pair) == 2):
            raise ModelError(f"edges[{i}]: expected a [parent, child] pair")
        edges.append((str(pair[0]), str(pair[1])))

    # assemble parent metadata up-front so CIM rows can be keyed
    index = {v: i for i, v in enumerate(names)}
    for i, (a, b) in enumerate(edges):
        if a not in index or b not in index:
            raise ModelError(f"edges[{i}]: unknown node in ({a}, {b})")
    parents = {v: [a for a, b in edges if b == v] for v in names}
    parents = {v: sorted(ps, key=index.get) for v, ps in parents.items()}

    def strides_sizes(v):
        ps = parents[v]
        szs = [sizes[index[p]] for p in ps]
        strides = [1]
        for s in szs[:-1]:
            strides.append(strides[-1] * s)
        return ps, strides, szs

    cims = {}
    cims_doc = doc["cims"]
    if not isinstance(cims_doc, dict):
        raise ModelError("cims: expected a mapping keyed by node name")
    unknown = sorted(set(cims_doc) - set(names))
    if unknown:
        raise ModelError(f"cims: unknown nodes {unknown}")
    for v in names:
        if v not in cims_doc:
            raise ModelError(f"cims.{v}: table missing")
        ps, strides, szs = strides_sizes(v)
        n_cfg = int(np.prod(szs)) if szs else 1
        sv = sizes[index[v]]
        table = np.full((n_cfg, sv, sv), np.nan)
        entries = cims_doc[v]
        if not isinstance(entries, list):
            raise ModelError(f"cims.{v}: expected a list of rate blocks")
        for j, entry in enumerate(entries):
            _check_keys(entry, f"cims.{v}[{j}]", ("rates",), optional=("parents",))
            given = entry.get("parents", {})
            cfg = _parent_config_from_mapping(ps, strides, szs, given or {},
                                              f"cims.{v}[{j}].parents")
            if not np.all(np.isnan(table[cfg])):
                raise ModelError(
                    f"cims.{v}[{j}]: duplicate block for parent configuration "
                    f"{_config_label(ps, strides, szs, cfg)}")
            rates = np.asarray(entry["rates"], dtype=np.float64)
            if rates.shape != (sv, sv):
                raise ModelError(
                    f"cims.{v}[{j}].rates: expected a {sv}x{sv} matrix")
            table[cfg] = rates
        for cfg in range(n_cfg):
            if np.all(np.isnan(table[cfg])):
                raise ModelError(
                    f"cims.{v}: missing block for parent configuration "
                    f"{_config_label(ps, strides, szs, cfg)}")
        cims[v] = table

    initial_doc = doc["initial"]
    _check_keys(initial_doc, "initial", ("tables",), optional=("edges",))
    edges0 = []
    for i, pair in enumerate(initial_doc.get("edges") or []):
        if not (isinstance(pair, list) and len(pair) == 2):
            raise ModelError(f"initial.edges[{i}]: expected a pair")
        edges0.append((str(pair[0]), str(pair[1])))
    parents0 = {v: [a for a, b in edges0 if b == v] for v in names}
    parents0 = {v: sorted(ps, key=index.get) for v, ps in parents0.items()}
    tables_doc = initial_doc["tables"]
    if not isinstance(tables_doc, dict):
        raise ModelError("initial.tables: expected a mapping")
    unknown = sorted(set(tables_doc) - set(names))
    if unknown:
        raise ModelError(f"initial.tables: unknown nodes {unknown}")
    tables = {}
    for v in names:
        if v not in tables_doc:
            raise ModelError(f"initial.tables.{v}: table missing")
        ps = parents0[v]
        szs = [sizes[index[p]] for p in ps]
        strides = [1]
        for s in szs[:-1]:
            strides.append(strides[-1] * s)
        n_cfg = int(np.prod(szs)) if szs else 1
        sv = sizes[index[v]]
        table = np.full((n_cfg, sv), np.nan)
        entries = tables_doc[v]
        if not isinstance(entries, list):
            raise ModelError(f"initial.tables.{v}: expected a list of rows")
        for j, entry in enumerate(entries):
            _check_keys(entry, f"initial.tables.{v}[{j}]", ("probs",),
                        optional=("parents",))
            cfg = _parent_config_from_mapping(
                ps, strides, szs, entry.get("parents") or {},
                f"initial.tables.{v}[{j}].parents")
            if not np.all(np.isnan(table[cfg])):
                raise ModelError(f"initial.tables.{v}[{j}]: duplicate row")
            probs = np.asarray(entry["probs"], dtype=np.float64)
            if probs.shape != (sv,):
                raise ModelError(
                    f"initial.tables.{v}[{j}].probs: expected {sv} entries")
            table[cfg] = probs
        for cfg in range(n_cfg):
            if np.all(np.isnan(table[cfg])):
                raise ModelError(
                    f"initial.tables.{v}: missing row for parent configuration "
                    f"{_config_label(ps, strides, szs, cfg)}")
        tables[v] = table

    try:
        initial = BayesNetInitial(tuple(names), tuple(sizes), tuple(edges0),
                                  tables)
        spec = CtbnSpec(tuple(names), tuple(sizes), tuple(edges), cims, initial)
    except ValueError as exc:
        raise ModelError(str(exc)) from exc
    return spec


_LV_PARAM_KEYS = ("alpha", "beta", "gamma", "delta", "eta", "truncation",
                  "predator_cap", "prey_cap", "initial_low", "initial_high")


def _parse_lotka(doc):
    _check_keys(doc, "model", ("schema", "kind", "params"),
                optional=("observed",))
    params = doc["params"] or {}
    _check_keys(params, "params", (), optional=_LV_PARAM_KEYS)
    try:
        return build_lotka_volterra(**params)
    except (TypeError, ValueError) as exc:
        raise ModelError(f"params: {exc}") from exc


def parse_model_document(text):
    """Parse a model document; returns (spec, declared observed nodes)."""
    doc = _load_yaml(text, "model")
    if doc.get("schema") != MODEL_SCHEMA:
        raise ModelError(
            f"model: schema must be {MODEL_SCHEMA!r}, got {doc.get('schema')!r}")
    kind = doc.get("kind", "tabular")
    if kind == "tabular":
        spec = _parse_tabular(doc)
    elif kind == "lotka_volterra":
        spec = _parse_lotka(doc)
    else:
        raise ModelError(f"model: unknown kind {kind!r}")
    observed = doc.get("observed") or []
    unknown = sorted(set(observed) - set(spec.nodes))
    if unknown:
        raise ModelError(f"observed: unknown nodes {unknown}")
    return spec, tuple(observed)


def parse_model(text):
    """Parse a model document into a validated CtbnSpec."""
    return parse_model_document(text)[0]


def serialize_model(spec, observed=()):
    """Model document for a tabular spec; round-trips through parse_model."""
    doc = {
        "schema": MODEL_SCHEMA,
        "nodes": [{"name": v, "states": spec.size(v)} for v in spec.nodes],
        "edges": [[a, b] for a, b in spec.edges],
        "cims": {},
        "initial": {
            "edges": [[a, b] for a, b in spec.initial.edges],
            "tables": {},
        },
    }
    if observed:
        doc["observed"] = list(observed)
    for v in spec.nodes:
        ps = spec.parents[v]
        strides = spec.parent_strides(v)
        szs = [spec.size(p) for p in ps]
        blocks = []
        for cfg in range(spec.n_parent_configs(v)):
            gen = spec.cims[v][cfg].copy()
            gen[np.diag_indices_from(gen)] = -gen.sum(axis=1)
            block = {"rates": [[float(x) for x in row] for row in gen]}
            if ps:
                block = {"parents": _config_label(ps, strides, szs, cfg),
                         **block}
            blocks.append(block)
        doc["cims"][v] = blocks
    init = spec.initial
    for v in spec.nodes:
        ps = init.parents[v]
        szs = [init.alphabets[init._index[p]] for p in ps]
        strides = [1]
        for s in szs[:-1]:
            strides.append(strides[-1] * s)
        rows = []
        for cfg in range(init.n_parent_configs(v)):
            row = {"probs": [float(x) for x in init.tables[v][cfg]]}
            if ps:
                row = {"parents": _config_label(ps, strides, szs, cfg), **row}
            rows.append(row)
        doc["initial"]["tables"][v] = rows
    return yaml.safe_dump(doc, sort_keys=False)


def parse_evidence(text, spec):
    """Parse an evidence document against a spec."""
    doc = _load_yaml(text, "evidence")
    _check_keys(doc, "evidence", ("schema", "t_min", "t_max", "observed"))
    if doc["schema"] != EVIDENCE_SCHEMA:
        raise ModelError(f"evidence: schema must be {EVIDENCE_SCHEMA!r}")
    t_min = float(doc["t_min"])
    t_max = float(doc["t_max"])
    if not t_min < t_max:
        raise ModelError("evidence: t_min must be below t_max")
    paths = {}
    observed_doc = doc["observed"] or {}
    unknown = sorted(set(observed_doc) - set(spec.nodes))
    if unknown:
        raise ModelError(f"observed: unknown nodes {unknown}")
    for v, entry in observed_doc.items():
        _check_keys(entry, f"observed.{v}", ("initial",), optional=("jumps",))
        sv = spec.size(v)
        initial = entry["initial"]
        if not isinstance(initial, int) or not 0 <= initial < sv:
            raise ModelError(f"observed.{v}.initial: state out of range")
        times = []
        states = [initial]
        for j, pair in enumerate(entry.get("jumps") or []):
            if not (isinstance(pair, list) and len(pair) == 2):
                raise ModelError(
                    f"observed.{v}.jumps[{j}]: expected [time, state]")
            t, s = float(pair[0]), pair[1]
            if not t_min < t < t_max:
                raise ModelError(
                    f"observed.{v}.jumps[{j}]: time must be interior")
            if times and t <= times[-1]:
                raise ModelError(
                    f"observed.{v}.jumps[{j}]: times must be strictly increasing")
            if not isinstance(s, int) or not 0 <= s < sv:
                raise ModelError(f"observed.{v}.jumps[{j}]: state out of range")
            if s == states[-1]:
                raise ModelError(
                    f"observed.{v}.jumps[{j}]: state must change at a jump")
            times.append(t)
            states.append(s)
        paths[v] = SamplePath(t_min, t_max, np.asarray(times),
                              np.asarray(states, dtype=np.int64))
    try:
        return Evidence(paths, t_min=t_min, t_max=t_max)
    except ValueError as exc:
        raise ModelError(str(exc)) from exc


def serialize_evidence(evidence):
    doc = {
        "schema": EVIDENCE_SCHEMA,
        "t_min": float(evidence.t_min),
        "t_max": float(evidence.t_max),
        "observed": {},
    }
    for v, path in evidence.paths.items():
        doc["observed"][v] = {
            "initial": int(path.states[0]),
            "jumps": [[float(t), int(s)]
                      for t, s in zip(path.times, path.states[1:])],
        }
    return yaml.safe_dump(doc, sort_keys=False)


def serialize_trajectory(traj):
    """Ground-truth document mirroring the evidence layout for all nodes."""
    doc = {
        "schema": EVIDENCE_SCHEMA,
        "t_min": float(traj.t_min),
        "t_max": float(traj.t_max),
        "observed": {},
    }
    for v in traj.nodes:
        path = traj.paths[v]
        doc["observed"][v] = {
            "initial": int(path.states[0]),
            "jumps": [[float(t), int(s)]
                      for t, s in zip(path.times, path.states[1:])],
        }
    return yaml.safe_dump(doc, sort_keys=False)


def simulate_evidence(spec, seed, observed, t_min=0.0, t_max=1.0):
    """Joint prior sample split into hidden ground truth and evidence.

    Returns (truth, evidence): the full trajectory for figure-style
    comparison and the observed coordinates only.  Deterministic in the
    seed.
    """
    unknown = sorted(set(observed) - set(spec.nodes))
    if unknown:
        raise ValueError(f"unknown observed nodes: {unknown}")
    rng = np.random.default_rng(seed)
    empty = Evidence({}, t_min=t_min, t_max=t_max)
    truth = _forward_cbi_sample(spec, empty, rng)
    evidence = Evidence({v: truth.paths[v] for v in observed},
                        t_min=t_min, t_max=t_max)
    return truth, evidence


def result_csv(estimate, meta=None):
    """Comma-separated export: node,t,state,posterior_probability rows."""
    buf = io.StringIO()
    for key, val in (meta or {}).items():
        buf.write(f"# {key}={val}\n")
    writer = csv.writer(buf)
    writer.writerow(["node", "t", "state", "posterior_probability"])
    for v in sorted(estimate.marginals):
        marg = estimate.marginals[v]
        for g, t in enumerate(estimate.grid):
            for s in range(marg.shape[1]):
                writer.writerow([v, repr(float(t)), s, repr(float(marg[g, s]))])
    return buf.getvalue()


def write_result(path, estimate, meta=None, diagnostics_rows=None):
    """Write the result document plus a CSV sibling; returns both paths."""
    doc = {
        "schema": RESULT_SCHEMA,
        "meta": dict(meta or {}),
        "grid": [float(t) for t in estimate.grid],
        "posterior": {
            v: [[float(p) for p in row] for row in estimate.marginals[v]]
            for v in sorted(estimate.marginals)
        },
    }
    if diagnostics_rows:
        doc["weights"] = diagnostics_rows
    path = str(path)
    with open(path, "w") as fh:
        fh.write(yaml.safe_dump(doc, sort_keys=False))
    csv_path = path + ".csv"
    with open(csv_path, "w") as fh:
        fh.write(result_csv(estimate, meta))
    return path, csv_path


def packaged_model_text(name):
    """Text of a packaged model document (example1, example2, lotka_volterra)."""
    if name not in PACKAGED_MODELS:
        raise ModelError(
            f"unknown packaged model {name!r}; choose from {PACKAGED_MODELS}")
    return resources.files("ctbn_mcmc.models").joinpath(f"{name}.yaml").read_text()
