"""Plot-ready exports: workspace heatmap CSV and depth-sliced tree diagrams in DOT."""

import logging

import graphviz
import numpy as np
import pandas as pd

from modules.causal_forest import CausalForest
from modules.causal_tree import CausalTree, summarize_node
from modules.core_model import FEATURE_NAMES, Cue, featurize_many
from modules.errors import UndefinedGroundTruthError, ValidationError
from modules.evaluation import ground_truth_tau
from modules.workspace import contains, generate_grid, grid_array

logger = logging.getLogger(__name__)

HEATMAP_COLUMNS = ["x", "y", "z", "tau_hat"]

# Light (easy) to dark (difficult).
_LIGHT = np.array([0xF7, 0xFB, 0xFF], dtype=float)
_DARK = np.array([0x08, 0x30, 0x6B], dtype=float)


def heatmap_grid(model, workspace, resolution, cue=Cue.MOVE):
    """Model τ̂ over a workspace lattice with the cue held fixed."""
    points = generate_grid(workspace, *resolution)
    if not all(contains(workspace, p) for p in points):
        raise ValidationError("heatmap lattice left the workspace")
    xyz = grid_array(points)
    tau = model.predict(featurize_many(xyz, [cue] * len(points)))
    return pd.DataFrame({"x": xyz[:, 0], "y": xyz[:, 1], "z": xyz[:, 2], "tau_hat": tau}, columns=HEATMAP_COLUMNS)


def ground_truth_grid(participant_data, control_data, workspace, resolution, radius):
    """Ball-average ground truth over a lattice; undefined points are NaN."""
    points = generate_grid(workspace, *resolution)
    values = []
    for p in points:
        try:
            values.append(ground_truth_tau(participant_data, control_data, p, radius))
        except UndefinedGroundTruthError:
            values.append(np.nan)
    xyz = grid_array(points)
    return pd.DataFrame({"x": xyz[:, 0], "y": xyz[:, 1], "z": xyz[:, 2], "tau_hat": values}, columns=HEATMAP_COLUMNS)


def write_heatmap(frame, path):
    """Write a heatmap frame as CSV."""
    frame.to_csv(path, index=False, lineterminator="\n")


def difficulty_color(tau, lo, hi):
    """Hex fill on a monotone scale: higher tau is darker."""
    share = 0.0 if hi <= lo else (tau - lo) / (hi - lo)
    rgb = np.rint(_LIGHT + (_DARK - _LIGHT) * min(max(share, 0.0), 1.0)).astype(int)
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def _visible_nodes(node, depth, max_depth):
    yield node, depth
    if not node.is_leaf and depth < max_depth:
        yield from _visible_nodes(node.left, depth + 1, max_depth)
        yield from _visible_nodes(node.right, depth + 1, max_depth)


def tree_diagram(tree, max_depth, feature_names=FEATURE_NAMES):
    """Digraph of `tree` cut at max_depth; cut internal nodes show their aggregate tau_hat."""
    if max_depth < 0:
        raise ValidationError(f"max_depth must be >= 0, got {max_depth}")
    visible = list(_visible_nodes(tree.root, 0, max_depth))
    taus = [summarize_node(node)[0] for node, _ in visible]
    lo, hi = min(taus), max(taus)

    dot = graphviz.Digraph(comment="Causal tree")
    dot.attr(rankdir="TB")
    dot.attr("node", shape="box", style="rounded,filled", fontname="helvetica")

    ids = {}
    for (node, depth), tau in zip(visible, taus):
        node_id = f"n{len(ids)}"
        ids[id(node)] = node_id
        tau_hat, n_est, leaf_ids = summarize_node(node)
        if node.is_leaf:
            label = f"tau_hat = {tau_hat:.3f} s\\ntreated {node.n_treated_est}, control {node.n_control_est}"
        elif depth == max_depth:
            label = f"tau_hat = {tau_hat:.3f} s\\n{len(leaf_ids)} leaves, {n_est} samples"
        else:
            name = feature_names[node.rule.feature_index]
            label = f"{name} < {node.rule.threshold:.3f}\\ntau_hat = {tau_hat:.3f} s"
        fill = difficulty_color(tau, lo, hi)
        font = "white" if hi > lo and (tau - lo) / (hi - lo) > 0.5 else "black"
        dot.node(node_id, label, fillcolor=fill, fontcolor=font)

    for node, depth in visible:
        if not node.is_leaf and depth < max_depth:
            dot.edge(ids[id(node)], ids[id(node.left)], label="True")
            dot.edge(ids[id(node)], ids[id(node.right)], label="False")
    return dot


def select_tree(model, tree_index):
    """The tree_index-th causal tree of a tree or forest model."""
    if isinstance(model, CausalTree):
        if tree_index != 0:
            raise ValidationError(f"tree index {tree_index} out of range for a single tree")
        return model
    if isinstance(model, CausalForest):
        if not 0 <= tree_index < len(model.trees):
            raise ValidationError(f"tree index {tree_index} out of range for {len(model.trees)} trees")
        return model.trees[tree_index]
    raise ValidationError(f"{type(model).__name__} has no causal tree to export")


def write_tree_diagram(dot, path):
    """Write the DOT source of a diagram."""
    with open(path, "w", encoding="utf-8") as file:
        file.write(dot.source)
