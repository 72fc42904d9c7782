#include "egc/graph.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace egc {

namespace {

void check_square(const Matrix& a, const char* who) {
  if (a.rows() != a.cols())
    throw ShapeError(std::string(who) + ": adjacency must be square, got " +
                     std::to_string(a.rows()) + "x" + std::to_string(a.cols()));
}

void check_binary(const Matrix& a, const char* who) {
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      if (a(i, j) != 0.0 && a(i, j) != 1.0)
        throw PreconditionError(std::string(who) + ": adjacency must be binary");
}

}  // namespace

std::uint64_t SkeletonGraph::hash() const {
  const std::string text = graph_to_text(*this);
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

SkeletonGraph build_hand_skeleton() {
  static const char* fingers[5] = {"thumb", "index", "middle", "ring", "pinky"};
  static const char* joints[4] = {"mcp", "pip", "dip", "tip"};

  SkeletonGraph g;
  g.node_names.push_back("wrist");
  for (int f = 0; f < 5; ++f)
    for (int j = 0; j < 4; ++j)
      g.node_names.push_back(std::string(fingers[f]) + "_" + joints[j]);

  const int k = 21;
  g.adjacency = Matrix::Zero(k, k);
  for (int f = 0; f < 5; ++f) {
    int base = 1 + 4 * f;
    g.bones.emplace_back(0, base);  // wrist -> MCP
    for (int j = 0; j < 3; ++j) g.bones.emplace_back(base + j, base + j + 1);
  }
  for (auto [a, b] : g.bones) {
    g.adjacency(a, b) = 1.0;
    g.adjacency(b, a) = 1.0;
  }
  g.adjacency = add_self_loops(g.adjacency);
  return g;
}

Matrix add_self_loops(const Matrix& adjacency) {
  check_square(adjacency, "add_self_loops");
  Matrix out = adjacency;
  out.diagonal().setOnes();
  return out;
}

GraphMatrices construct_matrices(const Matrix& adjacency) {
  check_square(adjacency, "construct_matrices");
  check_binary(adjacency, "construct_matrices");
  const Eigen::Index k = adjacency.rows();
  for (Eigen::Index i = 0; i < k; ++i)
    if (adjacency(i, i) != 1.0)
      throw PreconditionError(
          "construct_matrices: adjacency diagonal must be all ones (self-loops); node " +
          std::to_string(i) + " has none");

  const int e_count = static_cast<int>(adjacency.sum());

  GraphMatrices out;
  out.broadcast = Matrix::Zero(e_count, k);
  out.aggregate = Matrix::Zero(k, e_count);
  out.in_degree.assign(k, 0);
  out.edge_index = Eigen::MatrixXi::Constant(k, k, -1);
  out.edge_order.reserve(e_count);

  // Edge m runs j -> i when A(j, i) == 1: end node outer, start node inner.
  std::vector<int> end_node(e_count);
  int m = 0;
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) {
      if (adjacency(j, i) == 1.0) {
        out.broadcast(m, j) = 1.0;
        end_node[m] = static_cast<int>(i);
        out.edge_order.emplace_back(static_cast<int>(j), static_cast<int>(i));
        out.edge_index(j, i) = m;
        ++m;
      }
    }
  }

  for (int e = 0; e < e_count; ++e) {
    out.aggregate(end_node[e], e) = 1.0;
    out.in_degree[end_node[e]] += 1;
  }
  for (Eigen::Index i = 0; i < k; ++i) out.aggregate.row(i) /= double(out.in_degree[i]);

  return out;
}

Matrix symmetric_normalize(const Matrix& adjacency) {
  check_square(adjacency, "symmetric_normalize");
  const Eigen::Index k = adjacency.rows();
  if ((adjacency.array() < 0.0).any())
    throw PreconditionError("symmetric_normalize: entries must be non-negative");
  Vector deg = adjacency.rowwise().sum();
  for (Eigen::Index i = 0; i < k; ++i)
    if (deg(i) == 0.0)
      throw PreconditionError("symmetric_normalize: zero row at node " + std::to_string(i));
  Vector inv_sqrt = deg.array().rsqrt();
  return inv_sqrt.asDiagonal() * adjacency * inv_sqrt.asDiagonal();
}

std::string graph_to_text(const SkeletonGraph& graph) {
  std::ostringstream os;
  for (const auto& name : graph.node_names) os << "node " << name << "\n";
  for (auto [a, b] : graph.bones) os << "bone " << a << " " << b << "\n";
  return os.str();
}

SkeletonGraph parse_graph(const std::string& text, const std::string& origin) {
  SkeletonGraph g;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  std::vector<std::pair<std::string, std::string>> bone_tokens;
  while (std::getline(is, line)) {
    ++line_no;
    auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
    std::istringstream ls(line);
    std::string kind;
    if (!(ls >> kind)) continue;
    if (kind == "node") {
      std::string name;
      if (!(ls >> name))
        throw DataError(DataErrorCode::bad_header,
                        origin + ":" + std::to_string(line_no) + ": node line needs a name");
      g.node_names.push_back(name);
    } else if (kind == "bone") {
      std::string a, b;
      if (!(ls >> a >> b))
        throw DataError(DataErrorCode::bad_header,
                        origin + ":" + std::to_string(line_no) + ": bone line needs two endpoints");
      bone_tokens.emplace_back(a, b);
    } else {
      throw DataError(DataErrorCode::bad_header, origin + ":" + std::to_string(line_no) +
                                                     ": unknown directive '" + kind + "'");
    }
  }
  const int k = static_cast<int>(g.node_names.size());
  if (k == 0) throw DataError(DataErrorCode::bad_header, origin + ": graph has no nodes");

  auto resolve = [&](const std::string& token) -> int {
    for (int i = 0; i < k; ++i)
      if (g.node_names[i] == token) return i;
    try {
      std::size_t pos = 0;
      int idx = std::stoi(token, &pos);
      if (pos == token.size() && idx >= 0 && idx < k) return idx;
    } catch (const std::exception&) {
    }
    throw DataError(DataErrorCode::bad_header, origin + ": unknown node '" + token + "'");
  };

  g.adjacency = Matrix::Zero(k, k);
  for (const auto& [a, b] : bone_tokens) {
    int ia = resolve(a), ib = resolve(b);
    if (ia == ib)
      throw DataError(DataErrorCode::bad_header,
                      origin + ": bone endpoints must differ, got '" + a + " " + b + "'");
    g.bones.emplace_back(ia, ib);
    g.adjacency(ia, ib) = 1.0;
    g.adjacency(ib, ia) = 1.0;
  }
  g.adjacency = add_self_loops(g.adjacency);
  return g;
}

SkeletonGraph load_graph(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(DataErrorCode::missing_file, "cannot open graph file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_graph(buf.str(), path);
}

bool is_fingertip(const SkeletonGraph& graph, int node) {
  if (node < 0 || node >= graph.node_count()) return false;
  const std::string& name = graph.node_names[node];
  if (name.size() >= 4 && name.substr(name.size() - 4) == "_tip") return true;
  // Generic fallback: a leaf of the bone tree that is not the first node.
  int deg = 0;
  for (auto [a, b] : graph.bones) deg += (a == node) + (b == node);
  return deg == 1 && node != 0;
}

}  // namespace egc
