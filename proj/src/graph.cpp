#include "dse/graph.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dse/errors.hpp"

namespace dse {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw InvariantError(what);
}

bool is_sorted_unique(const EdgeList& edges) {
  return std::adjacent_find(edges.begin(), edges.end(),
                            [](const Edge& a, const Edge& b) { return !(a < b); }) == edges.end();
}

}  // namespace

Graph Graph::create(std::string id, int node_count, EdgeList edges, Eigen::MatrixXd node_features,
                    int label, std::optional<EdgeList> ground_truth) {
  require(node_count > 0, "graph must have at least one node");
  require(!id.empty(), "graph id must be non-empty");
  require(std::none_of(id.begin(), id.end(), [](unsigned char c) { return std::isspace(c); }),
          "graph id must not contain whitespace: '" + id + "'");
  require(label >= 0, "label must be non-negative");
  require(node_features.rows() == node_count, "node_features has " +
                                                   std::to_string(node_features.rows()) +
                                                   " rows, expected " + std::to_string(node_count));
  for (const Edge& e : edges) {
    require(e.u != e.v, "self-loop on node " + std::to_string(e.u));
    require(e.u >= 0 && e.v < node_count,
            "edge (" + std::to_string(e.u) + "," + std::to_string(e.v) + ") out of range");
  }
  std::sort(edges.begin(), edges.end());
  require(is_sorted_unique(edges), "duplicate edge in graph " + id);

  if (ground_truth) {
    std::sort(ground_truth->begin(), ground_truth->end());
    require(is_sorted_unique(*ground_truth), "duplicate ground-truth edge in graph " + id);
    for (const Edge& e : *ground_truth) {
      require(std::binary_search(edges.begin(), edges.end(), e),
              "ground-truth edge (" + std::to_string(e.u) + "," + std::to_string(e.v) +
                  ") is not an edge of graph " + id);
    }
    // An empty explanation carries no information; normalize to absent.
    if (ground_truth->empty()) ground_truth.reset();
  }

  Graph g;
  g.id_ = std::move(id);
  g.node_count_ = node_count;
  g.edges_ = std::move(edges);
  g.features_ = std::move(node_features);
  g.label_ = label;
  g.ground_truth_ = std::move(ground_truth);
  return g;
}

bool Graph::has_edge(const Edge& e) const {
  return std::binary_search(edges_.begin(), edges_.end(), e);
}

int Graph::edge_index(const Edge& e) const {
  auto it = std::lower_bound(edges_.begin(), edges_.end(), e);
  if (it == edges_.end() || *it != e) return -1;
  return static_cast<int>(it - edges_.begin());
}

Eigen::MatrixXd Graph::adjacency() const {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(node_count_, node_count_);
  for (const Edge& e : edges_) a(e.u, e.v) = a(e.v, e.u) = 1.0;
  return a;
}

Eigen::MatrixXd Graph::weighted_adjacency(std::span<const double> weights) const {
  if (weights.size() != edges_.size()) {
    throw ShapeError("edge weight vector has " + std::to_string(weights.size()) +
                     " entries, graph has " + std::to_string(edges_.size()) + " edges");
  }
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(node_count_, node_count_);
  for (std::size_t k = 0; k < edges_.size(); ++k) {
    a(edges_[k].u, edges_[k].v) = a(edges_[k].v, edges_[k].u) = weights[k];
  }
  return a;
}

Graph Graph::with_edges(EdgeList edges) const {
  std::optional<EdgeList> gt;
  if (ground_truth_) {
    std::sort(edges.begin(), edges.end());
    gt = edge_intersection(*ground_truth_, edges);
  }
  return create(id_, node_count_, std::move(edges), features_, label_, std::move(gt));
}

bool operator==(const Graph& a, const Graph& b) {
  return a.id_ == b.id_ && a.node_count_ == b.node_count_ && a.label_ == b.label_ &&
         a.edges_ == b.edges_ && a.ground_truth_ == b.ground_truth_ &&
         a.features_.rows() == b.features_.rows() && a.features_.cols() == b.features_.cols() &&
         a.features_ == b.features_;
}

double EdgeMask::score_of(const Edge& e) const {
  auto it = std::lower_bound(edges.begin(), edges.end(), e);
  if (it == edges.end() || *it != e) throw IdentityError("edge not in mask's parent graph");
  return scores[static_cast<std::size_t>(it - edges.begin())];
}

EdgeList all_pairs(int node_count) {
  EdgeList pairs;
  pairs.reserve(static_cast<std::size_t>(node_count) * (node_count - 1) / 2);
  for (int i = 0; i < node_count; ++i)
    for (int j = i + 1; j < node_count; ++j) pairs.emplace_back(i, j);
  return pairs;
}

EdgeList edge_union(const EdgeList& a, const EdgeList& b) {
  EdgeList out;
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

EdgeList edge_difference(const EdgeList& a, const EdgeList& b) {
  EdgeList out;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

EdgeList edge_intersection(const EdgeList& a, const EdgeList& b) {
  EdgeList out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

Graph induce_subgraph(const Graph& g, const EdgeMask& mask) {
  if (mask.parent_id != g.id()) {
    throw IdentityError("mask belongs to graph '" + mask.parent_id + "', not '" + g.id() + "'");
  }
  return g.with_edges(mask.selected);
}

std::size_t selection_size(std::size_t edge_count, double ratio) {
  // The epsilon keeps e.g. 0.15 * 20 = 3.0000000000000004 from rounding up to 4.
  const double raw = std::ceil(ratio * static_cast<double>(edge_count) - 1e-9);
  const auto k = static_cast<std::size_t>(std::max(1.0, raw));
  return std::min(k, edge_count);
}

EdgeMask top_fraction_mask(const Graph& parent, std::vector<double> scores, double ratio) {
  if (scores.empty()) throw EmptyInputError("top_fraction_mask: empty score map");
  if (!(ratio > 0.0 && ratio <= 1.0)) {
    throw InvariantError("top_fraction_mask: ratio must lie in (0, 1], got " + std::to_string(ratio));
  }
  if (scores.size() != parent.edge_count()) {
    throw ShapeError("top_fraction_mask: " + std::to_string(scores.size()) + " scores for " +
                     std::to_string(parent.edge_count()) + " edges");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Edges are already lexicographic, so a stable sort on score breaks ties by edge order.
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const std::size_t k = selection_size(scores.size(), ratio);
  EdgeList selected;
  selected.reserve(k);
  for (std::size_t i = 0; i < k; ++i) selected.push_back(parent.edges()[order[i]]);
  std::sort(selected.begin(), selected.end());
  return EdgeMask{parent.id(), parent.edges(), std::move(scores), std::move(selected)};
}

EdgeMask mask_from_selection(const Graph& parent, EdgeList selected) {
  std::sort(selected.begin(), selected.end());
  selected.erase(std::unique(selected.begin(), selected.end()), selected.end());
  std::vector<double> scores(parent.edge_count(), 0.0);
  for (const Edge& e : selected) {
    const int k = parent.edge_index(e);
    if (k < 0) throw IdentityError("selected edge is not an edge of graph '" + parent.id() + "'");
    scores[static_cast<std::size_t>(k)] = 1.0;
  }
  return EdgeMask{parent.id(), parent.edges(), std::move(scores), std::move(selected)};
}

EdgeMask complement_mask(const Graph& parent, const EdgeMask& mask) {
  if (mask.parent_id != parent.id()) {
    throw IdentityError("mask belongs to graph '" + mask.parent_id + "', not '" + parent.id() + "'");
  }
  return mask_from_selection(parent, edge_difference(parent.edges(), mask.selected));
}

// ---------------------------------------------------------------------------
// Text format

namespace {

void append_double(std::string& out, double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  out.append(buf, res.ptr);
}

class LineReader {
 public:
  LineReader(std::string_view text, std::size_t base) : text_(text), base_(base) {}

  bool next_line() {
    if (pos_ >= text_.size()) return false;
    line_start_ = pos_;
    std::size_t end = text_.find('\n', pos_);
    if (end == std::string_view::npos) end = text_.size();
    line_ = text_.substr(pos_, end - pos_);
    if (!line_.empty() && line_.back() == '\r') line_.remove_suffix(1);
    pos_ = end + 1;
    cursor_ = 0;
    return true;
  }

  bool blank() const {
    return line_.find_first_not_of(" \t") == std::string_view::npos;
  }

  /// Next whitespace separated token, empty at end of line.
  std::string_view token() {
    while (cursor_ < line_.size() && (line_[cursor_] == ' ' || line_[cursor_] == '\t')) ++cursor_;
    const std::size_t start = cursor_;
    while (cursor_ < line_.size() && line_[cursor_] != ' ' && line_[cursor_] != '\t') ++cursor_;
    token_offset_ = base_ + line_start_ + start;
    return line_.substr(start, cursor_ - start);
  }

  std::size_t token_offset() const { return token_offset_; }
  std::size_t line_offset() const { return base_ + line_start_; }
  std::size_t end_offset() const { return base_ + text_.size(); }

  template <typename T>
  T number(const char* what) {
    const std::string_view t = token();
    if (t.empty()) throw ParseError(std::string("expected ") + what + ", found end of line", token_offset_);
    T value{};
    auto res = std::from_chars(t.data(), t.data() + t.size(), value);
    if (res.ec != std::errc() || res.ptr != t.data() + t.size()) {
      throw ParseError(std::string("malformed ") + what + " '" + std::string(t) + "'", token_offset_);
    }
    return value;
  }

  void expect_end() {
    const std::string_view t = token();
    if (!t.empty()) throw ParseError("unexpected trailing token '" + std::string(t) + "'", token_offset_);
  }

 private:
  std::string_view text_;
  std::size_t base_;
  std::size_t pos_ = 0;
  std::size_t line_start_ = 0;
  std::string_view line_;
  std::size_t cursor_ = 0;
  std::size_t token_offset_ = 0;
};

Graph parse_graph_at(std::string_view text, std::size_t base) {
  LineReader in(text, base);
  bool have_header = false;
  while (in.next_line()) {
    if (!in.blank()) {
      have_header = true;
      break;
    }
  }
  if (!have_header) throw ParseError("expected 'graph' header, found end of input", base + text.size());

  if (in.token() != "graph") throw ParseError("expected 'graph' header", in.token_offset());
  const std::string id(in.token());
  if (id.empty()) throw ParseError("missing graph id", in.token_offset());
  const auto node_count = in.number<int>("node count");
  const std::size_t count_offset = in.token_offset();
  if (node_count <= 0) throw ParseError("node count must be positive", count_offset);
  const auto label = in.number<int>("label");
  in.expect_end();

  std::vector<std::vector<double>> rows(static_cast<std::size_t>(node_count));
  std::vector<bool> seen(static_cast<std::size_t>(node_count), false);
  EdgeList edges;
  EdgeList gt;
  while (in.next_line()) {
    if (in.blank()) continue;
    const std::string_view kind = in.token();
    const std::size_t kind_offset = in.token_offset();
    if (kind == "feat") {
      const auto i = in.number<int>("node index");
      if (i < 0 || i >= node_count) throw ParseError("feature row index out of range", in.token_offset());
      if (seen[static_cast<std::size_t>(i)]) throw ParseError("duplicate feature row", in.token_offset());
      seen[static_cast<std::size_t>(i)] = true;
      for (std::string_view t = in.token(); !t.empty(); t = in.token()) {
        double v{};
        auto res = std::from_chars(t.data(), t.data() + t.size(), v);
        if (res.ec != std::errc() || res.ptr != t.data() + t.size()) {
          throw ParseError("malformed feature value '" + std::string(t) + "'", in.token_offset());
        }
        rows[static_cast<std::size_t>(i)].push_back(v);
      }
    } else if (kind == "edge" || kind == "gt") {
      const auto u = in.number<int>("endpoint");
      const std::size_t u_offset = in.token_offset();
      const auto v = in.number<int>("endpoint");
      in.expect_end();
      if (u < 0 || v < 0 || u >= node_count || v >= node_count || u == v) {
        throw ParseError("invalid edge endpoints", u_offset);
      }
      (kind == "edge" ? edges : gt).emplace_back(u, v);
    } else if (kind == "graph") {
      throw ParseError("unexpected second 'graph' header (missing blank separator?)", kind_offset);
    } else {
      throw ParseError("unknown record '" + std::string(kind) + "'", kind_offset);
    }
  }

  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) throw ParseError("missing feature row for node " + std::to_string(i), in.end_offset());
  }
  const std::size_t dim = rows[0].size();
  Eigen::MatrixXd features(node_count, static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != dim) {
      throw ParseError("feature row " + std::to_string(i) + " has inconsistent width", in.end_offset());
    }
    for (std::size_t j = 0; j < dim; ++j) features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  try {
    std::optional<EdgeList> gt_opt;
    if (!gt.empty()) gt_opt = std::move(gt);
    return Graph::create(id, node_count, std::move(edges), std::move(features), label, std::move(gt_opt));
  } catch (const InvariantError& e) {
    throw ParseError(e.what(), base);
  }
}

}  // namespace

std::string serialize_graph(const Graph& g) {
  std::string out;
  out += "graph " + g.id() + " " + std::to_string(g.node_count()) + " " + std::to_string(g.label()) + "\n";
  const auto& x = g.node_features();
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    out += "feat " + std::to_string(i);
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      out += ' ';
      append_double(out, x(i, j));
    }
    out += '\n';
  }
  for (const Edge& e : g.edges()) out += "edge " + std::to_string(e.u) + " " + std::to_string(e.v) + "\n";
  if (g.ground_truth()) {
    for (const Edge& e : *g.ground_truth()) {
      out += "gt " + std::to_string(e.u) + " " + std::to_string(e.v) + "\n";
    }
  }
  return out;
}

Graph parse_graph(std::string_view text) { return parse_graph_at(text, 0); }

std::string serialize_dataset(std::span<const Graph> graphs) {
  std::string out;
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    if (i > 0) out += '\n';
    out += serialize_graph(graphs[i]);
  }
  return out;
}

std::vector<Graph> parse_dataset(std::string_view text) {
  std::vector<Graph> graphs;
  std::size_t pos = 0;
  std::size_t block_start = std::string_view::npos;
  auto flush = [&](std::size_t end) {
    if (block_start != std::string_view::npos) {
      graphs.push_back(parse_graph_at(text.substr(block_start, end - block_start), block_start));
      block_start = std::string_view::npos;
    }
  };
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(pos, end - pos);
    const bool blank = line.find_first_not_of(" \t\r") == std::string_view::npos;
    if (blank) {
      flush(pos);
    } else if (block_start == std::string_view::npos) {
      block_start = pos;
    }
    pos = end + 1;
  }
  flush(text.size());
  return graphs;
}

std::vector<Graph> load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_dataset(ss.str());
}

void save_dataset(const std::string& path, std::span<const Graph> graphs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write dataset file " + path);
  out << serialize_dataset(graphs);
}

}  // namespace dse
