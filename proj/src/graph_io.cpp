#include "gmetro/graph_io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace gmetro {

using nlohmann::json;
namespace fs = std::filesystem;

std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s) {
  double x = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw Error("malformed number '" + std::string(s) + "'");
  return x;
}

namespace {

int parse_int(std::string_view s) {
  int x = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw Error("malformed integer '" + std::string(s) + "'");
  return x;
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? line.npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

Matrix matrix_from_json(const json& j, Eigen::Index cols_if_empty) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = rows ? static_cast<Eigen::Index>(j[0].size()) : cols_if_empty;
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (static_cast<Eigen::Index>(j[i].size()) != cols) throw Error("ragged matrix in graph record");
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
  }
  return m;
}

std::ifstream open_in(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot open " + p.string());
  return in;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  return out;
}

void write_meta(const fs::path& dir, const DatasetMeta& m) {
  json j{{"format_version", m.format_version}, {"task_kind", std::string(to_string(m.task))},
         {"d_v", m.d_v},  {"d_e", m.d_e},  {"num_classes", m.num_classes},
         {"directed", m.directed}};
  open_out(dir / "meta.json") << j.dump(2) << "\n";
}

}  // namespace

json graph_to_json(const Graph& g, Split split) {
  json j;
  j["node_features"] = matrix_to_json(g.node_features);
  json edges = json::array();
  for (const Edge& e : g.edges) edges.push_back({e.src, e.dst});
  j["edge_index"] = std::move(edges);
  if (g.edge_features) j["edge_features"] = matrix_to_json(*g.edge_features);
  if (g.node_labels) j["node_labels"] = *g.node_labels;
  if (g.graph_label) j["graph_label"] = *g.graph_label;
  if (g.node_split) {
    json tags = json::array();
    for (Split s : *g.node_split) tags.push_back(std::string(to_string(s)));
    j["node_split"] = std::move(tags);
  }
  j["directed"] = g.directed;
  j["num_nodes"] = g.num_nodes();
  j["feature_dim"] = g.feature_dim();
  if (split != Split::none) j["split"] = std::string(to_string(split));
  return j;
}

Graph graph_from_json(const json& j, Split* split) {
  Graph g;
  const Eigen::Index d = j.value("feature_dim", 0);
  g.node_features = matrix_from_json(j.at("node_features"), d);
  if (j.contains("num_nodes") && j["num_nodes"].get<int>() != g.num_nodes())
    throw Error("graph record num_nodes disagrees with node_features");
  for (const auto& e : j.at("edge_index")) g.edges.push_back({e.at(0).get<int>(), e.at(1).get<int>()});
  if (j.contains("edge_features")) g.edge_features = matrix_from_json(j["edge_features"], 0);
  if (j.contains("node_labels")) g.node_labels = j["node_labels"].get<std::vector<int>>();
  if (j.contains("graph_label")) g.graph_label = j["graph_label"].get<int>();
  if (j.contains("node_split")) {
    std::vector<Split> tags;
    for (const auto& s : j["node_split"]) tags.push_back(parse_split(s.get<std::string>()));
    g.node_split = std::move(tags);
  }
  g.directed = j.value("directed", false);
  if (split) *split = parse_split(j.value("split", std::string("none")));
  return g;
}

void write_dataset(const fs::path& dir, const DatasetSplit& data) {
  fs::create_directories(dir);
  DatasetMeta meta;
  meta.task = data.task;
  meta.d_v = data.feature_dim();
  meta.d_e = data.edge_feature_dim();
  meta.num_classes = data.num_classes;
  if (data.task == TaskKind::node) {
    const Graph& g = data.graph;
    meta.directed = g.directed;
    auto nodes = open_out(dir / "nodes.csv");
    nodes << "id";
    for (int c = 0; c < g.feature_dim(); ++c) nodes << ",f" << c;
    nodes << ",label,split\n";
    for (int i = 0; i < g.num_nodes(); ++i) {
      nodes << i;
      for (int c = 0; c < g.feature_dim(); ++c) nodes << ',' << format_double(g.node_features(i, c));
      nodes << ',' << (g.node_labels ? (*g.node_labels)[i] : -1);
      nodes << ',' << to_string(g.node_split ? (*g.node_split)[i] : Split::none) << '\n';
    }
    auto edges = open_out(dir / "edges.csv");
    edges << "src,dst";
    for (int c = 0; c < g.edge_feature_dim(); ++c) edges << ",e" << c;
    edges << '\n';
    for (int e = 0; e < g.num_edges(); ++e) {
      edges << g.edges[e].src << ',' << g.edges[e].dst;
      for (int c = 0; c < g.edge_feature_dim(); ++c) edges << ',' << format_double((*g.edge_features)(e, c));
      edges << '\n';
    }
  } else {
    auto out = open_out(dir / "graphs.jsonl");
    for (Split s : {Split::train, Split::val, Split::test}) {
      for (const Graph& g : data.graphs(s)) {
        meta.directed = g.directed;
        out << graph_to_json(g, s).dump() << '\n';
      }
    }
  }
  write_meta(dir, meta);
}

DatasetMeta read_meta(const fs::path& dir) {
  if (!fs::exists(dir / "meta.json")) throw NotFoundError("dataset not found: " + (dir / "meta.json").string());
  auto in = open_in(dir / "meta.json");
  json j = json::parse(in);
  DatasetMeta m;
  m.format_version = j.at("format_version").get<int>();
  if (m.format_version != kDatasetFormatVersion)
    throw Error("unsupported dataset format version " + std::to_string(m.format_version));
  m.task = parse_task_kind(j.at("task_kind").get<std::string>());
  m.d_v = j.at("d_v").get<int>();
  m.d_e = j.value("d_e", 0);
  m.num_classes = j.at("num_classes").get<int>();
  m.directed = j.value("directed", false);
  return m;
}

std::vector<Graph> read_graphs_jsonl(const fs::path& file) {
  auto in = open_in(file);
  std::vector<Graph> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(graph_from_json(json::parse(line)));
  }
  return out;
}

DatasetSplit read_dataset(const fs::path& dir) {
  const DatasetMeta meta = read_meta(dir);
  DatasetSplit data;
  data.task = meta.task;
  data.num_classes = meta.num_classes;
  if (meta.task == TaskKind::graph) {
    auto in = open_in(dir / "graphs.jsonl");
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      Split s = Split::none;
      Graph g = graph_from_json(json::parse(line), &s);
      if (s == Split::none) throw Error("graph record without split tag in " + dir.string());
      data.graphs(s).push_back(std::move(g));
    }
    return data;
  }

  Graph g;
  g.directed = meta.directed;
  std::unordered_map<long long, int> index;
  std::vector<std::vector<double>> feats;
  std::vector<int> labels;
  std::vector<Split> tags;
  {
    auto in = open_in(dir / "nodes.csv");
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto cells = split_csv(line);
      if (static_cast<int>(cells.size()) != meta.d_v + 3) throw Error("nodes.csv row has wrong column count");
      const long long id = std::stoll(std::string(cells[0]));
      if (!index.emplace(id, static_cast<int>(feats.size())).second) throw Error("duplicate node id in nodes.csv");
      std::vector<double> row;
      for (int c = 0; c < meta.d_v; ++c) row.push_back(parse_double(cells[1 + c]));
      feats.push_back(std::move(row));
      labels.push_back(parse_int(cells[meta.d_v + 1]));
      tags.push_back(parse_split(cells[meta.d_v + 2]));
    }
  }
  g.node_features.resize(static_cast<Eigen::Index>(feats.size()), meta.d_v);
  for (std::size_t i = 0; i < feats.size(); ++i)
    for (int c = 0; c < meta.d_v; ++c) g.node_features(static_cast<Eigen::Index>(i), c) = feats[i][c];
  g.node_labels = std::move(labels);
  g.node_split = std::move(tags);
  {
    auto in = open_in(dir / "edges.csv");
    std::string line;
    std::getline(in, line);
    std::vector<std::vector<double>> efeats;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto cells = split_csv(line);
      if (static_cast<int>(cells.size()) != meta.d_e + 2) throw Error("edges.csv row has wrong column count");
      auto lookup = [&](std::string_view s) {
        auto it = index.find(std::stoll(std::string(s)));
        if (it == index.end()) throw Error("edges.csv references unknown node id " + std::string(s));
        return it->second;
      };
      g.edges.push_back({lookup(cells[0]), lookup(cells[1])});
      if (meta.d_e > 0) {
        std::vector<double> row;
        for (int c = 0; c < meta.d_e; ++c) row.push_back(parse_double(cells[2 + c]));
        efeats.push_back(std::move(row));
      }
    }
    if (meta.d_e > 0) {
      Matrix ef(static_cast<Eigen::Index>(efeats.size()), meta.d_e);
      for (std::size_t i = 0; i < efeats.size(); ++i)
        for (int c = 0; c < meta.d_e; ++c) ef(static_cast<Eigen::Index>(i), c) = efeats[i][c];
      g.edge_features = std::move(ef);
    }
  }
  data.graph = std::move(g);
  return data;
}

}  // namespace gmetro
