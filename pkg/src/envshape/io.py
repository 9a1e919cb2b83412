"""JSON documents for MDPs, abstractions, policies and shaping reports.

Floats are written with Python's shortest round-trip repr, so a load/save
cycle reproduces the same text and the same arrays bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .abstraction import Abstraction
from .kernels import SparseKernel
from .mdp import FiniteMdp, Policy


def mdp_to_dict(m: FiniteMdp) -> dict:
    csr = m.transition.to_csr().tocsr()
    csr.sort_indices()
    A = m.n_actions
    transitions = []
    for row in range(csr.shape[0]):
        lo, hi = csr.indptr[row], csr.indptr[row + 1]
        nxt = [{"s'": int(j), "p": float(p)} for j, p in zip(csr.indices[lo:hi], csr.data[lo:hi]) if p != 0.0]
        transitions.append({"s": row // A, "a": row % A, "next": nxt})
    init = [{"s": int(s), "p": float(p)} for s, p in enumerate(m.initial_dist) if p != 0.0]
    return {
        "n_states": m.n_states,
        "n_actions": A,
        "gamma": m.gamma,
        "r_max": m.r_max,
        "rewards": m.reward.tolist(),
        "transitions": transitions,
        "initial_dist": init,
    }


def mdp_from_dict(d: dict) -> FiniteMdp:
    S, A = int(d["n_states"]), int(d["n_actions"])
    rows, cols, vals = [], [], []
    for rec in d["transitions"]:
        s, a = int(rec["s"]), int(rec["a"])
        if not (0 <= s < S and 0 <= a < A):
            raise ValueError(f"transition record ({s}, {a}) out of range")
        for nxt in rec["next"]:
            rows.append(s * A + a)
            cols.append(int(nxt["s'"]))
            vals.append(float(nxt["p"]))
    trans = sp.csr_matrix((vals, (rows, cols)), shape=(S * A, S))
    mu = np.zeros(S)
    for rec in d["initial_dist"]:
        mu[int(rec["s"])] += float(rec["p"])
    reward = np.array(d["rewards"], dtype=float).reshape(S, A)
    return FiniteMdp(SparseKernel(trans, A), reward, mu, float(d["gamma"]), float(d["r_max"]))


def abstraction_to_dict(phi: Abstraction) -> dict:
    return {"n_ground": phi.n_ground, "n_abstract": phi.n_abstract, "map": phi.map.tolist()}


def abstraction_from_dict(d: dict) -> Abstraction:
    phi = Abstraction.from_map(np.array(d["map"], dtype=np.int64), int(d["n_abstract"]))
    if phi.n_ground != int(d["n_ground"]):
        raise ValueError("abstraction map length does not match n_ground")
    return phi


def policy_to_dict(pi: Policy) -> dict:
    return {"kind": pi.kind, "table": pi.table.tolist()}


def policy_from_dict(d: dict) -> Policy:
    if "kind" not in d and "actions" in d:
        return Policy.deterministic(d["actions"])
    return Policy(d["kind"], d["table"])


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def save_mdp(path, m: FiniteMdp) -> None:
    write_json(path, mdp_to_dict(m))


def load_mdp(path) -> FiniteMdp:
    return mdp_from_dict(read_json(path))


def save_abstraction(path, phi: Abstraction) -> None:
    write_json(path, abstraction_to_dict(phi))


def load_abstraction(path) -> Abstraction:
    return abstraction_from_dict(read_json(path))


def save_policy(path, pi: Policy) -> None:
    write_json(path, policy_to_dict(pi))


def load_policy(path) -> Policy:
    return policy_from_dict(read_json(path))
