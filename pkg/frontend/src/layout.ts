// Pure tree layout: layered by depth, stable left-to-right order by node
// id, so snapshots are deterministic.

import type { IdeaNodeDoc, TreeDoc } from "./types.js";

export type ScoreBand = "unscored" | "low" | "mid" | "high";

export interface PlacedNode {
  node: IdeaNodeDoc;
  x: number; // 0..1 within the row
  y: number; // 0..1 top to bottom by depth
  band: ScoreBand;
  frontier: boolean;
  dimmed: boolean;
}

export interface PlacedEdge {
  from: PlacedNode;
  to: PlacedNode;
}

export interface TreeLayout {
  nodes: PlacedNode[];
  edges: PlacedEdge[];
  depths: number;
}

export function scoreBand(overall: number | null | undefined): ScoreBand {
  if (overall === null || overall === undefined) return "unscored";
  if (overall >= 7) return "high";
  if (overall >= 4) return "mid";
  return "low";
}

export function layoutTree(tree: TreeDoc): TreeLayout {
  const frontier = new Set(tree.selected_frontier);
  const byDepth = new Map<number, IdeaNodeDoc[]>();
  for (const node of tree.nodes) {
    const row = byDepth.get(node.depth) ?? [];
    row.push(node);
    byDepth.set(node.depth, row);
  }
  const maxDepth = Math.max(0, ...byDepth.keys());
  const placed = new Map<string, PlacedNode>();
  const nodes: PlacedNode[] = [];
  for (let depth = 0; depth <= maxDepth; depth++) {
    const row = (byDepth.get(depth) ?? []).slice().sort((a, b) => a.id.localeCompare(b.id));
    row.forEach((node, index) => {
      const item: PlacedNode = {
        node,
        x: (index + 0.5) / row.length,
        y: maxDepth === 0 ? 0.5 : depth / maxDepth,
        band: scoreBand(node.assessment?.overall ?? null),
        frontier: frontier.has(node.id),
        dimmed: node.status === "pruned" && !frontier.has(node.id),
      };
      placed.set(node.id, item);
      nodes.push(item);
    });
  }
  const edges: PlacedEdge[] = [];
  for (const [parent, child] of tree.edges) {
    const from = placed.get(parent);
    const to = placed.get(child);
    if (from && to) edges.push({ from, to });
  }
  return { nodes, edges, depths: maxDepth + 1 };
}
