#pragma once

#include "egc/common.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace egc {

/// Undirected skeleton with self-loops on the diagonal. Node indices are
/// 0-based throughout.
struct SkeletonGraph {
  Matrix adjacency;                         // K×K binary, diagonal all ones
  std::vector<std::string> node_names;      // K labels
  std::vector<std::pair<int, int>> bones;   // undirected pairs as authored

  int node_count() const { return static_cast<int>(adjacency.rows()); }

  /// FNV-1a hash of the canonical text form; stored in model files and
  /// dataset manifests so mismatched graphs are rejected early.
  std::uint64_t hash() const;
};

/// Broadcast/aggregation matrices plus the edge enumeration they imply.
/// The edge order is the canonical kernel index order: end node outer,
/// start node inner, both ascending.
struct GraphMatrices {
  Matrix broadcast;                            // |E|×K, one 1 per row (start node)
  Matrix aggregate;                            // K×|E|, rows sum to 1
  std::vector<int> in_degree;                  // K, diagonal included
  std::vector<std::pair<int, int>> edge_order; // (start, end) per edge
  Eigen::MatrixXi edge_index;                  // K×K lookup, -1 where no edge

  int edge_count() const { return static_cast<int>(broadcast.rows()); }
  int node_count() const { return static_cast<int>(broadcast.cols()); }
};

/// The 21-keypoint hand tree: wrist root plus five 4-joint finger chains,
/// with self-loops already added. 20 bones, 61 directed edges.
SkeletonGraph build_hand_skeleton();

/// Force the diagonal to 1. Idempotent.
Matrix add_self_loops(const Matrix& adjacency);

/// Enumerate directed edges of a self-looped adjacency matrix and build the
/// broadcast matrix B and row-normalized aggregation matrix. Edge m runs
/// j -> i when adjacency(j, i) == 1, scanned with i outer and j inner.
GraphMatrices construct_matrices(const Matrix& adjacency);

/// D^{-1/2} A D^{-1/2} with D the row-sum degree matrix.
Matrix symmetric_normalize(const Matrix& adjacency);

/// Text graph format: `node NAME` lines (order defines indices) followed by
/// `bone A B` lines referencing node names or indices. Self-loops are added
/// on load. '#' starts a comment.
SkeletonGraph load_graph(const std::string& path);
SkeletonGraph parse_graph(const std::string& text, const std::string& origin);
std::string graph_to_text(const SkeletonGraph& graph);

/// Indices of nodes whose bone-to-parent ends at a fingertip, and general
/// bone lookup helpers used by the synthetic corruptor.
bool is_fingertip(const SkeletonGraph& graph, int node);

}  // namespace egc
