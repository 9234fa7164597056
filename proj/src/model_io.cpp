#include "bitcache/model_io.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "bitcache/error.hpp"
#include "bitcache/transpose.hpp"

namespace bitcache {

namespace fs = std::filesystem;
using nlohmann::json;

bool NetworkDescriptor::has_weights() const {
  return std::all_of(layers.begin(), layers.end(), [](const LayerSpec& l) {
    return !l.layer.has_filters() || !l.weights.empty();
  });
}

const LayerSpec& NetworkDescriptor::find(const std::string& layer_name) const {
  for (const auto& l : layers)
    if (l.layer.name == layer_name) return l;
  throw Error(ErrorCode::MissingInput, "no layer named " + layer_name);
}

void finalize_descriptor(NetworkDescriptor& net) {
  if (net.in_h == 0 || net.in_w == 0 || net.in_c == 0)
    throw Error(ErrorCode::Schema, "input dimensions must be positive");

  std::map<std::string, std::size_t> layer_index;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    auto& l = net.layers[i].layer;
    if (l.name.empty() || l.name == "input")
      throw Error(ErrorCode::Schema, "layer " + std::to_string(i) + " needs a name other than 'input'");
    if (!layer_index.emplace(l.name, i).second)
      throw Error(ErrorCode::Schema, "duplicate layer name " + l.name);
    if (l.group.empty()) l.group = l.name;
  }

  // Consecutive layers sharing a group name form one group.
  net.groups.clear();
  std::map<std::string, std::size_t> group_index;
  std::vector<std::size_t> group_of(net.layers.size());
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& g = net.layers[i].layer.group;
    if (net.groups.empty() || net.groups.back().name != g) {
      if (group_index.count(g))
        throw Error(ErrorCode::Schema, "group " + g + " is not contiguous");
      if (layer_index.count(g) && net.layers[layer_index.at(g)].layer.group != g)
        throw Error(ErrorCode::Schema, "group name " + g + " collides with a layer name");
      group_index[g] = net.groups.size();
      net.groups.push_back({g, {}, {}});
    }
    net.groups.back().layers.push_back(i);
    group_of[i] = net.groups.size() - 1;
  }

  // Default producer: the previous layer, or the previous group when crossing groups.
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    auto& in = net.layers[i].inputs;
    if (!in.empty()) continue;
    if (i == 0)
      in.push_back("input");
    else if (group_of[i - 1] != group_of[i])
      in.push_back(net.groups[group_of[i - 1]].name);
    else
      in.push_back(net.layers[i - 1].layer.name);
  }

  // Group outputs from direct layer references inside the group.
  for (auto& g : net.groups) {
    std::set<std::size_t> consumed;
    for (std::size_t i : g.layers)
      for (const auto& name : net.layers[i].inputs) {
        auto it = layer_index.find(name);
        if (it != layer_index.end() && group_of[it->second] == group_of[i]) consumed.insert(it->second);
      }
    for (std::size_t i : g.layers)
      if (!consumed.count(i)) g.outputs.push_back(i);
  }

  struct Dims {
    std::uint32_t h, w, c;
  };
  std::vector<Dims> out(net.layers.size());
  net.sources.assign(net.layers.size(), {});
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    auto& spec = net.layers[i];
    auto& l = spec.layer;
    auto& src = net.sources[i];
    for (const auto& name : spec.inputs) {
      if (name == "input") {
        src.push_back({true, 0});
        continue;
      }
      if (auto it = layer_index.find(name); it != layer_index.end() && group_index.count(name) == 0) {
        if (it->second >= i)
          throw Error(ErrorCode::MissingInput,
                      "layer " + l.name + " reads " + name + " before it is computed (cycle)");
        src.push_back({false, it->second});
        continue;
      }
      if (auto it = group_index.find(name); it != group_index.end()) {
        const auto& g = net.groups[it->second];
        if (it->second >= group_of[i]) {
          // A single-layer group named after its layer may be read inside later groups only.
          throw Error(ErrorCode::MissingInput,
                      "layer " + l.name + " reads group " + name + " before it completes (cycle)");
        }
        for (std::size_t o : g.outputs) src.push_back({false, o});
        continue;
      }
      throw Error(ErrorCode::MissingInput, "layer " + l.name + " reads unknown input " + name);
    }

    Dims d{0, 0, 0};
    for (const auto& s : src) {
      const Dims sd = s.network_input ? Dims{net.in_h, net.in_w, net.in_c} : out[s.layer];
      if (d.c == 0) {
        d = sd;
      } else {
        if (sd.h != d.h || sd.w != d.w)
          throw Error(ErrorCode::ShapeMismatch, "layer " + l.name + " concatenates inputs of different sizes");
        d.c += sd.c;
      }
    }
    if (l.kind == LayerKind::FC) d = {1, 1, d.h * d.w * d.c};
    auto check = [&](std::uint32_t declared, std::uint32_t actual, const char* what) {
      if (declared != 0 && declared != actual)
        throw Error(ErrorCode::ShapeMismatch, "layer " + l.name + ": declared " + what + "=" +
                                                  std::to_string(declared) + " but input gives " +
                                                  std::to_string(actual));
    };
    check(l.C, d.c, "C");
    check(l.H, d.h, "H");
    check(l.W, d.w, "W");
    l.H = d.h;
    l.W = d.w;
    l.C = d.c;
    if (!l.has_filters()) l.M = l.C;
    l.validate();
    if (!spec.weights.empty() && spec.weights.size() != l.filter_bytes())
      throw Error(ErrorCode::ShapeMismatch, "layer " + l.name + ": expected " +
                                                std::to_string(l.filter_bytes()) + " weight bytes, got " +
                                                std::to_string(spec.weights.size()));
    if (!l.has_filters() && !spec.weights.empty())
      throw Error(ErrorCode::Schema, "pooling layer " + l.name + " cannot carry weights");
    if (spec.bn) {
      if (!l.has_filters()) throw Error(ErrorCode::Schema, "batch norm needs a conv layer: " + l.name);
      if (spec.bn->scale.size() != l.M || spec.bn->bias.size() != l.M)
        throw Error(ErrorCode::MissingInput, "layer " + l.name + ": batch norm needs one scale and bias per output channel");
      if (spec.bn->shift > 16) throw Error(ErrorCode::Schema, "batch norm shift above 16");
      l.batchnorm = true;
    } else if (l.batchnorm && !spec.weights.empty()) {
      throw Error(ErrorCode::MissingInput, "layer " + l.name + " is flagged for batch norm but has no constants");
    }
    out[i] = {l.out_h(), l.out_w(), l.M};
  }
}

namespace {

std::string field_path(const std::string& where, const std::string& key) { return where + "." + key; }

const std::set<std::string> kLayerFields = {"name", "kind", "inputs", "R", "S", "M", "stride",
                                            "padding", "relu", "batchnorm", "weights", "C",
                                            "H", "W"};

LayerSpec parse_layer(const json& j, const std::string& where, const std::string& group,
                      const fs::path& base) {
  if (!j.is_object()) throw Error(ErrorCode::Schema, where + ": layer must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!kLayerFields.count(it.key()))
      throw Error(ErrorCode::Schema, field_path(where, it.key()) + ": unknown field");
  auto get_u32 = [&](const char* key, std::uint32_t dflt) -> std::uint32_t {
    if (!j.contains(key)) return dflt;
    const auto& v = j.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
      throw Error(ErrorCode::Schema, field_path(where, key) + ": expected a non-negative integer");
    return v.get<std::uint32_t>();
  };
  auto get_bool = [&](const char* key) {
    if (!j.contains(key)) return false;
    if (!j.at(key).is_boolean()) throw Error(ErrorCode::Schema, field_path(where, key) + ": expected a boolean");
    return j.at(key).get<bool>();
  };
  LayerSpec s;
  auto& l = s.layer;
  if (!j.contains("name") || !j.at("name").is_string())
    throw Error(ErrorCode::Schema, field_path(where, "name") + ": required string");
  l.name = j.at("name").get<std::string>();
  l.group = group;
  if (!j.contains("kind") || !j.at("kind").is_string())
    throw Error(ErrorCode::Schema, field_path(where, "kind") + ": required string");
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "conv") l.kind = LayerKind::Conv;
  else if (kind == "maxpool") l.kind = LayerKind::MaxPool;
  else if (kind == "avgpool") l.kind = LayerKind::AvgPool;
  else if (kind == "fc") l.kind = LayerKind::FC;
  else throw Error(ErrorCode::Schema, field_path(where, "kind") + ": expected conv|maxpool|avgpool|fc");
  l.R = get_u32("R", 1);
  l.S = get_u32("S", l.R);
  l.U = get_u32("stride", 1);
  l.C = get_u32("C", 0);
  l.H = get_u32("H", 0);
  l.W = get_u32("W", 0);
  if (l.has_filters()) {
    if (!j.contains("M")) throw Error(ErrorCode::Schema, field_path(where, "M") + ": required for conv and fc");
    l.M = get_u32("M", 0);
  }
  if (j.contains("padding")) {
    const auto& p = j.at("padding");
    if (p == "same") l.padding = Padding::Same;
    else if (p == "valid") l.padding = Padding::Valid;
    else throw Error(ErrorCode::Schema, field_path(where, "padding") + ": expected valid|same");
  }
  l.relu = get_bool("relu");
  if (j.contains("inputs")) {
    const auto& in = j.at("inputs");
    if (!in.is_array()) throw Error(ErrorCode::Schema, field_path(where, "inputs") + ": expected an array");
    for (const auto& v : in) {
      if (!v.is_string()) throw Error(ErrorCode::Schema, field_path(where, "inputs") + ": expected strings");
      s.inputs.push_back(v.get<std::string>());
    }
  }
  if (j.contains("batchnorm")) {
    const auto& bn = j.at("batchnorm");
    if (bn.is_boolean()) {
      l.batchnorm = bn.get<bool>();
    } else if (bn.is_object()) {
      BatchNormParams p;
      try {
        p.shift = bn.value("shift", 0u);
        p.scale = bn.at("scale").get<std::vector<std::uint16_t>>();
        p.bias = bn.at("bias").get<std::vector<std::int32_t>>();
      } catch (const json::exception& e) {
        throw Error(ErrorCode::Schema, field_path(where, "batchnorm") + ": " + e.what());
      }
      s.bn = std::move(p);
      l.batchnorm = true;
    } else {
      throw Error(ErrorCode::Schema, field_path(where, "batchnorm") + ": expected a boolean or an object");
    }
  }
  if (j.contains("weights")) {
    if (!j.at("weights").is_string())
      throw Error(ErrorCode::Schema, field_path(where, "weights") + ": expected a file path");
    const fs::path p = base / j.at("weights").get<std::string>();
    auto t = read_tensor(p.string());
    s.weights = std::move(t.data);
  }
  return s;
}

}  // namespace

NetworkDescriptor parse_descriptor(const json& j, const std::string& base_dir) {
  if (!j.is_object()) throw Error(ErrorCode::Schema, "descriptor must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (it.key() != "name" && it.key() != "input" && it.key() != "groups" && it.key() != "layers")
      throw Error(ErrorCode::Schema, it.key() + ": unknown top-level field");
  const fs::path base(base_dir);
  NetworkDescriptor net;
  net.name = j.value("name", std::string("network"));
  if (!j.contains("input") || !j.at("input").is_object())
    throw Error(ErrorCode::Schema, "input: required object {height, width, channels}");
  const auto& in = j.at("input");
  try {
    net.in_h = in.at("height").get<std::uint32_t>();
    net.in_w = in.at("width").get<std::uint32_t>();
    net.in_c = in.at("channels").get<std::uint32_t>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Schema, std::string("input: ") + e.what());
  }
  if (in.contains("tensor")) net.input_path = (base / in.at("tensor").get<std::string>()).string();

  if (j.contains("layers")) {
    const auto& ls = j.at("layers");
    if (!ls.is_array()) throw Error(ErrorCode::Schema, "layers: expected an array");
    for (std::size_t i = 0; i < ls.size(); ++i) {
      const std::string where = "layers[" + std::to_string(i) + "]";
      const std::string name = ls[i].is_object() ? ls[i].value("name", std::string()) : std::string();
      net.layers.push_back(parse_layer(ls[i], where, name, base));
    }
  }
  if (j.contains("groups")) {
    const auto& gs = j.at("groups");
    if (!gs.is_array()) throw Error(ErrorCode::Schema, "groups: expected an array");
    for (std::size_t gi = 0; gi < gs.size(); ++gi) {
      const std::string gw = "groups[" + std::to_string(gi) + "]";
      const auto& g = gs[gi];
      if (!g.is_object() || !g.contains("name") || !g.contains("layers") || !g.at("layers").is_array())
        throw Error(ErrorCode::Schema, gw + ": expected {name, layers[]}");
      const auto gname = g.at("name").get<std::string>();
      const auto& ls = g.at("layers");
      for (std::size_t i = 0; i < ls.size(); ++i)
        net.layers.push_back(parse_layer(ls[i], gw + ".layers[" + std::to_string(i) + "]", gname, base));
    }
  }
  finalize_descriptor(net);
  return net;
}

NetworkDescriptor load_descriptor(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::Io, "cannot open " + path);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::Schema, path + ": " + e.what());
  }
  return parse_descriptor(j, fs::path(path).parent_path().string().empty()
                                 ? std::string(".")
                                 : fs::path(path).parent_path().string());
}

void save_descriptor(const NetworkDescriptor& net, const std::string& dir,
                     const std::string& file_name) {
  fs::create_directories(dir);
  json groups = json::array();
  for (const auto& g : net.groups) {
    json layers = json::array();
    for (std::size_t i : g.layers) {
      const auto& s = net.layers[i];
      const auto& l = s.layer;
      json jl = {{"name", l.name}, {"kind", to_string(l.kind)}, {"inputs", s.inputs},
                 {"C", l.C},       {"relu", l.relu},          {"padding", to_string(l.padding)}};
      if (l.kind != LayerKind::FC) {
        jl["R"] = l.R;
        jl["S"] = l.S;
        jl["stride"] = l.U;
      }
      if (l.has_filters()) jl["M"] = l.M;
      if (s.bn) jl["batchnorm"] = {{"shift", s.bn->shift}, {"scale", s.bn->scale}, {"bias", s.bn->bias}};
      if (!s.weights.empty()) {
        std::string file = l.name + ".u8";
        std::replace(file.begin(), file.end(), '/', '_');
        write_tensor((fs::path(dir) / file).string(),
                     {{l.M, l.R, l.S, l.C}, TensorLayout::Regular, 8, s.weights});
        jl["weights"] = file;
      }
      layers.push_back(std::move(jl));
    }
    groups.push_back({{"name", g.name}, {"layers", std::move(layers)}});
  }
  json j = {{"name", net.name},
            {"input", {{"height", net.in_h}, {"width", net.in_w}, {"channels", net.in_c}}},
            {"groups", std::move(groups)}};
  if (!net.input_path.empty())
    j["input"]["tensor"] = fs::path(net.input_path).filename().string();
  std::ofstream f(fs::path(dir) / file_name);
  if (!f) throw Error(ErrorCode::Io, "cannot write descriptor into " + dir);
  f << j.dump(2) << "\n";
}

namespace {

class Builder {
 public:
  explicit Builder(NetworkDescriptor& net) : net_(net) {}

  void group(std::string g) { group_ = std::move(g); }

  void conv(const std::string& name, std::vector<std::string> in, std::uint32_t C, std::uint32_t R,
            std::uint32_t S, std::uint32_t M, std::uint32_t U = 1, Padding pad = Padding::Same) {
    LayerSpec s;
    s.layer.name = qualify(name);
    s.layer.group = group_;
    s.layer.kind = LayerKind::Conv;
    s.layer.H = s.layer.W = 0;
    s.layer.C = C;
    s.layer.R = R;
    s.layer.S = S;
    s.layer.M = M;
    s.layer.U = U;
    s.layer.padding = pad;
    s.layer.relu = true;
    s.inputs = qualify_all(in);
    net_.layers.push_back(std::move(s));
  }

  void pool(const std::string& name, std::vector<std::string> in, LayerKind kind, std::uint32_t R,
            std::uint32_t U, Padding pad) {
    LayerSpec s;
    s.layer.name = qualify(name);
    s.layer.group = group_;
    s.layer.kind = kind;
    s.layer.H = s.layer.W = s.layer.C = 0;
    s.layer.R = s.layer.S = R;
    s.layer.U = U;
    s.layer.padding = pad;
    s.inputs = qualify_all(in);
    net_.layers.push_back(std::move(s));
  }

  std::string qualify(const std::string& n) const {
    return n == group_ || group_.empty() ? n : group_ + "/" + n;
  }

 private:
  std::vector<std::string> qualify_all(const std::vector<std::string>& in) const {
    std::vector<std::string> out;
    for (const auto& n : in) out.push_back(n.rfind('@', 0) == 0 ? n.substr(1) : qualify(n));
    return out;
  }

  NetworkDescriptor& net_;
  std::string group_;
};

}  // namespace

NetworkDescriptor inception_v3() {
  NetworkDescriptor net;
  net.name = "inception_v3";
  net.in_h = net.in_w = 299;
  net.in_c = 3;
  Builder b(net);
  const auto V = Padding::Valid;
  const auto Sm = Padding::Same;
  auto stem_conv = [&](const char* n, const char* in, std::uint32_t C, std::uint32_t R,
                       std::uint32_t M, std::uint32_t U, Padding p) {
    b.group(n);
    b.conv(n, {std::string("@") + in}, C, R, R, M, U, p);
  };
  stem_conv("Conv2D_1a_3x3", "input", 3, 3, 32, 2, V);
  stem_conv("Conv2D_2a_3x3", "Conv2D_1a_3x3", 32, 3, 32, 1, V);
  stem_conv("Conv2D_2b_3x3", "Conv2D_2a_3x3", 32, 3, 64, 1, Sm);
  b.group("MaxPool_3a_3x3");
  b.pool("MaxPool_3a_3x3", {"@Conv2D_2b_3x3"}, LayerKind::MaxPool, 3, 2, V);
  stem_conv("Conv2D_3b_1x1", "MaxPool_3a_3x3", 64, 1, 80, 1, V);
  stem_conv("Conv2D_4a_3x3", "Conv2D_3b_1x1", 80, 3, 192, 1, V);
  b.group("MaxPool_5a_3x3");
  b.pool("MaxPool_5a_3x3", {"@Conv2D_4a_3x3"}, LayerKind::MaxPool, 3, 2, V);

  auto mixed5 = [&](const char* g, const char* prev, std::uint32_t cin, std::uint32_t pool_proj) {
    b.group(g);
    const std::string in = std::string("@") + prev;
    b.conv("b0_1x1", {in}, cin, 1, 1, 64);
    b.conv("b1_1x1", {in}, cin, 1, 1, 48);
    b.conv("b1_5x5", {"b1_1x1"}, 48, 5, 5, 64);
    b.conv("b2_1x1", {in}, cin, 1, 1, 64);
    b.conv("b2_3x3a", {"b2_1x1"}, 64, 3, 3, 96);
    b.conv("b2_3x3b", {"b2_3x3a"}, 96, 3, 3, 96);
    b.pool("b3_avgpool", {in}, LayerKind::AvgPool, 3, 1, Sm);
    b.conv("b3_1x1", {"b3_avgpool"}, cin, 1, 1, pool_proj);
  };
  mixed5("Mixed_5b", "MaxPool_5a_3x3", 192, 32);
  mixed5("Mixed_5c", "Mixed_5b", 256, 64);
  mixed5("Mixed_5d", "Mixed_5c", 288, 64);

  b.group("Mixed_6a");
  b.conv("b0_3x3", {"@Mixed_5d"}, 288, 3, 3, 384, 2, V);
  b.conv("b1_1x1", {"@Mixed_5d"}, 288, 1, 1, 64);
  b.conv("b1_3x3a", {"b1_1x1"}, 64, 3, 3, 96);
  b.conv("b1_3x3b", {"b1_3x3a"}, 96, 3, 3, 96, 2, V);
  b.pool("b2_maxpool", {"@Mixed_5d"}, LayerKind::MaxPool, 3, 2, V);

  auto mixed6 = [&](const char* g, const char* prev, std::uint32_t c7) {
    b.group(g);
    const std::string in = std::string("@") + prev;
    b.conv("b0_1x1", {in}, 768, 1, 1, 192);
    b.conv("b1_1x1", {in}, 768, 1, 1, c7);
    b.conv("b1_1x7", {"b1_1x1"}, c7, 1, 7, c7);
    b.conv("b1_7x1", {"b1_1x7"}, c7, 7, 1, 192);
    b.conv("b2_1x1", {in}, 768, 1, 1, c7);
    b.conv("b2_7x1a", {"b2_1x1"}, c7, 7, 1, c7);
    b.conv("b2_1x7a", {"b2_7x1a"}, c7, 1, 7, c7);
    b.conv("b2_7x1b", {"b2_1x7a"}, c7, 7, 1, c7);
    b.conv("b2_1x7b", {"b2_7x1b"}, c7, 1, 7, 192);
    b.pool("b3_avgpool", {in}, LayerKind::AvgPool, 3, 1, Sm);
    b.conv("b3_1x1", {"b3_avgpool"}, 768, 1, 1, 192);
  };
  mixed6("Mixed_6b", "Mixed_6a", 128);
  mixed6("Mixed_6c", "Mixed_6b", 160);
  mixed6("Mixed_6d", "Mixed_6c", 160);
  mixed6("Mixed_6e", "Mixed_6d", 192);

  b.group("Mixed_7a");
  b.conv("b0_1x1", {"@Mixed_6e"}, 768, 1, 1, 192);
  b.conv("b0_3x3", {"b0_1x1"}, 192, 3, 3, 320, 2, V);
  b.conv("b1_1x1", {"@Mixed_6e"}, 768, 1, 1, 192);
  b.conv("b1_1x7", {"b1_1x1"}, 192, 1, 7, 192);
  b.conv("b1_7x1", {"b1_1x7"}, 192, 7, 1, 192);
  b.conv("b1_3x3", {"b1_7x1"}, 192, 3, 3, 192, 2, V);
  b.pool("b2_maxpool", {"@Mixed_6e"}, LayerKind::MaxPool, 3, 2, V);

  auto mixed7 = [&](const char* g, const char* prev, std::uint32_t cin) {
    b.group(g);
    const std::string in = std::string("@") + prev;
    b.conv("b0_1x1", {in}, cin, 1, 1, 320);
    b.conv("b1_1x1", {in}, cin, 1, 1, 384);
    b.conv("b1_1x3", {"b1_1x1"}, 384, 1, 3, 384);
    b.conv("b1_3x1", {"b1_1x1"}, 384, 3, 1, 384);
    b.conv("b2_1x1", {in}, cin, 1, 1, 448);
    b.conv("b2_3x3", {"b2_1x1"}, 448, 3, 3, 384);
    b.conv("b2_1x3", {"b2_3x3"}, 384, 1, 3, 384);
    b.conv("b2_3x1", {"b2_3x3"}, 384, 3, 1, 384);
    b.pool("b3_avgpool", {in}, LayerKind::AvgPool, 3, 1, Sm);
    b.conv("b3_1x1", {"b3_avgpool"}, cin, 1, 1, 192);
  };
  mixed7("Mixed_7b", "Mixed_7a", 1280);
  mixed7("Mixed_7c", "Mixed_7b", 2048);

  b.group("AvgPool");
  b.pool("AvgPool", {"@Mixed_7c"}, LayerKind::AvgPool, 8, 1, V);
  b.group("FullyConnected");
  LayerSpec fc;
  fc.layer.name = fc.layer.group = "FullyConnected";
  fc.layer.kind = LayerKind::FC;
  fc.layer.C = 2048;
  fc.layer.M = 1001;
  fc.inputs = {"AvgPool"};
  net.layers.push_back(std::move(fc));

  finalize_descriptor(net);
  return net;
}

void fill_random_weights(NetworkDescriptor& net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& s : net.layers) {
    const auto& l = s.layer;
    if (!l.has_filters()) continue;
    s.weights.resize(l.filter_bytes());
    for (auto& w : s.weights) w = static_cast<std::uint8_t>(rng());
    if (l.batchnorm) {
      BatchNormParams p;
      const std::uint64_t max_acc = std::uint64_t{l.R} * l.S * l.C * 255 * 255;
      const auto bits = static_cast<std::uint32_t>(std::bit_width(max_acc));
      p.shift = bits > 16 ? bits - 16 : 0;
      for (std::uint32_t m = 0; m < l.M; ++m) {
        p.scale.push_back(static_cast<std::uint16_t>(1 + rng() % 4096));
        p.bias.push_back(static_cast<std::int32_t>(static_cast<std::int64_t>(rng() % (1u << 27)) -
                                                   (1 << 26)));
      }
      s.bn = std::move(p);
    }
  }
}

NetworkDescriptor toy_network(std::uint64_t seed) {
  NetworkDescriptor net;
  net.name = "toy";
  net.in_h = net.in_w = 16;
  net.in_c = 3;
  Builder b(net);
  b.group("conv1");
  b.conv("conv1", {"@input"}, 3, 3, 3, 8, 1, Padding::Same);
  net.layers.back().layer.batchnorm = true;
  b.group("pool1");
  b.pool("pool1", {"@conv1"}, LayerKind::MaxPool, 3, 2, Padding::Valid);
  b.group("conv2");
  b.conv("conv2", {"@pool1"}, 8, 5, 5, 8, 1, Padding::Same);
  b.group("pool2");
  b.pool("pool2", {"@conv2"}, LayerKind::AvgPool, 7, 1, Padding::Valid);
  LayerSpec fc;
  fc.layer.name = fc.layer.group = "fc";
  fc.layer.kind = LayerKind::FC;
  fc.layer.C = 0;
  fc.layer.M = 8;
  fc.inputs = {"pool2"};
  net.layers.push_back(std::move(fc));
  finalize_descriptor(net);
  fill_random_weights(net, seed);
  finalize_descriptor(net);
  return net;
}

Tensor random_input(std::uint32_t h, std::uint32_t w, std::uint32_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor t(h, w, c);
  for (auto& v : t.data) v = static_cast<std::uint8_t>(rng());
  return t;
}

std::string sidecar_path(const std::string& tensor_path) { return tensor_path + ".json"; }

TensorFile read_tensor(const std::string& path) {
  std::ifstream side(sidecar_path(path));
  if (!side) throw Error(ErrorCode::Io, "missing sidecar " + sidecar_path(path));
  TensorFile t;
  try {
    const json j = json::parse(side);
    t.shape = j.at("shape").get<std::vector<std::uint32_t>>();
    const auto layout = j.value("layout", std::string("regular"));
    if (layout == "regular") t.layout = TensorLayout::Regular;
    else if (layout == "transposed") t.layout = TensorLayout::Transposed;
    else throw Error(ErrorCode::Schema, sidecar_path(path) + ": layout must be regular|transposed");
    t.width_bits = j.value("width_bits", 8u);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Schema, sidecar_path(path) + ": " + e.what());
  }
  if (t.width_bits != 8) throw Error(ErrorCode::Schema, "only 8-bit tensors are supported");
  std::size_t count = 1;
  for (auto d : t.shape) count *= d;

  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::Io, "cannot open " + path);
  std::vector<std::uint8_t> raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (t.layout == TensorLayout::Transposed) {
    t.data = unpack_bit_planes(raw, count);
  } else {
    if (raw.size() != count)
      throw Error(ErrorCode::ShapeMismatch, path + ": " + std::to_string(raw.size()) +
                                                " bytes for " + std::to_string(count) + " elements");
    t.data = std::move(raw);
  }
  return t;
}

void write_tensor(const std::string& path, const TensorFile& t) {
  std::size_t count = 1;
  for (auto d : t.shape) count *= d;
  if (t.data.size() != count) throw Error(ErrorCode::ShapeMismatch, "tensor data does not match its shape");
  const auto bytes = t.layout == TensorLayout::Transposed ? pack_bit_planes(t.data) : t.data;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::Io, "cannot write " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  std::ofstream side(sidecar_path(path));
  side << json{{"shape", t.shape},
               {"layout", t.layout == TensorLayout::Transposed ? "transposed" : "regular"},
               {"width_bits", t.width_bits}}
              .dump()
       << "\n";
}

Tensor to_activation(const TensorFile& t) {
  if (t.shape.size() != 3) throw Error(ErrorCode::ShapeMismatch, "activation tensors are [H, W, C]");
  Tensor a(t.shape[0], t.shape[1], t.shape[2]);
  a.data = t.data;
  return a;
}

TensorFile from_activation(const Tensor& t, TensorLayout layout) {
  return {{t.h, t.w, t.c}, layout, 8, t.data};
}

namespace {

// Oracle arithmetic. Deliberately written from the layer definitions with
// plain 64-bit integers and no dependency on the engine or the mapper tables.

Tensor gather(const NetworkDescriptor& net, std::size_t i, const Tensor& input,
              const std::map<std::string, Tensor>& done) {
  std::vector<const Tensor*> parts;
  for (const auto& s : net.sources[i])
    parts.push_back(s.network_input ? &input : &done.at(net.layers[s.layer].layer.name));
  std::uint32_t c = 0;
  for (auto* p : parts) c += p->c;
  Tensor t(parts[0]->h, parts[0]->w, c);
  for (std::uint32_t y = 0; y < t.h; ++y)
    for (std::uint32_t x = 0; x < t.w; ++x) {
      std::uint32_t off = 0;
      for (auto* p : parts) {
        for (std::uint32_t ch = 0; ch < p->c; ++ch) t.at(y, x, off + ch) = p->at(y, x, ch);
        off += p->c;
      }
    }
  return t;
}

std::uint8_t window_value(const Tensor& in, std::int64_t y, std::int64_t x, std::uint32_t ch) {
  if (y < 0 || x < 0 || y >= in.h || x >= in.w) return 0;
  return in.at(static_cast<std::uint32_t>(y), static_cast<std::uint32_t>(x), ch);
}

Tensor requantize_all(const std::vector<std::uint32_t>& acc, std::uint32_t h, std::uint32_t w,
                      std::uint32_t c) {
  Tensor out(h, w, c);
  const auto [lo_it, hi_it] = std::minmax_element(acc.begin(), acc.end());
  const std::uint64_t lo = *lo_it, hi = *hi_it;
  if (lo == hi) return out;
  const std::uint64_t range = hi - lo;
  int pre = 0;
  while ((range >> pre) >= (1u << 16)) ++pre;
  const std::uint64_t r = range >> pre;
  // Largest k keeping the multiplier below 2^16.
  int k = 40;
  while (((255ULL << k) / r) >= (1u << 16)) --k;
  const std::uint64_t mult = (255ULL << k) / r;
  for (std::size_t i = 0; i < acc.size(); ++i) {
    const std::uint64_t v = ((acc[i] - lo) >> pre) * mult + (k > 0 ? (1ULL << (k - 1)) : 0);
    out.data[i] = static_cast<std::uint8_t>(v >> k);
  }
  return out;
}

}  // namespace

std::map<std::string, Tensor> reference_inference(const NetworkDescriptor& net,
                                                  const Tensor& input) {
  if (input.h != net.in_h || input.w != net.in_w || input.c != net.in_c)
    throw Error(ErrorCode::ShapeMismatch, "input tensor does not match the descriptor");
  std::map<std::string, Tensor> done;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& spec = net.layers[i];
    const auto& l = spec.layer;
    Tensor in = gather(net, i, input, done);
    if (l.kind == LayerKind::FC) {
      Tensor flat(1, 1, in.h * in.w * in.c);
      flat.data = in.data;
      in = flat;
    }
    const std::uint32_t eh = l.out_h(), ew = l.out_w();
    const std::int64_t pt = l.pad_top(), pl = l.pad_left();

    if (l.kind == LayerKind::MaxPool || l.kind == LayerKind::AvgPool) {
      Tensor out(eh, ew, l.C);
      for (std::uint32_t oy = 0; oy < eh; ++oy)
        for (std::uint32_t ox = 0; ox < ew; ++ox)
          for (std::uint32_t ch = 0; ch < l.C; ++ch) {
            std::uint64_t best = 0, sum = 0;
            for (std::uint32_t dy = 0; dy < l.R; ++dy)
              for (std::uint32_t dx = 0; dx < l.S; ++dx) {
                const auto v = window_value(in, std::int64_t{oy} * l.U + dy - pt,
                                            std::int64_t{ox} * l.U + dx - pl, ch);
                best = std::max<std::uint64_t>(best, v);
                sum += v;
              }
            out.at(oy, ox, ch) = static_cast<std::uint8_t>(
                l.kind == LayerKind::MaxPool ? best : sum / (std::uint64_t{l.R} * l.S));
          }
      done[l.name] = std::move(out);
      continue;
    }

    if (spec.weights.empty()) throw Error(ErrorCode::MissingInput, "layer " + l.name + " has no weights");
    std::vector<std::uint32_t> acc(std::size_t{eh} * ew * l.M);
    for (std::uint32_t oy = 0; oy < eh; ++oy)
      for (std::uint32_t ox = 0; ox < ew; ++ox)
        for (std::uint32_t m = 0; m < l.M; ++m) {
          std::uint64_t s = 0;
          for (std::uint32_t dy = 0; dy < l.R; ++dy)
            for (std::uint32_t dx = 0; dx < l.S; ++dx)
              for (std::uint32_t ch = 0; ch < l.C; ++ch) {
                const std::uint64_t wv =
                    spec.weights[((std::size_t{m} * l.R + dy) * l.S + dx) * l.C + ch];
                s += wv * window_value(in, std::int64_t{oy} * l.U + dy - pt,
                                       std::int64_t{ox} * l.U + dx - pl, ch);
              }
          std::uint32_t v = static_cast<std::uint32_t>(s);
          if (spec.bn) {
            const std::uint64_t low = (v >> spec.bn->shift) & 0xFFFFu;
            v = static_cast<std::uint32_t>(low * spec.bn->scale[m] +
                                           static_cast<std::uint32_t>(spec.bn->bias[m]));
          }
          if (l.relu && static_cast<std::int32_t>(v) < 0) v = 0;
          acc[(std::size_t{oy} * ew + ox) * l.M + m] = v;
        }
    done[l.name] = requantize_all(acc, eh, ew, l.M);
  }
  return done;
}

DiffReport compare_outputs(const Tensor& expected, const Tensor& actual) {
  if (expected.h != actual.h || expected.w != actual.w || expected.c != actual.c)
    throw Error(ErrorCode::ShapeMismatch, "compared tensors differ in shape");
  DiffReport d;
  for (std::uint32_t y = 0; y < expected.h; ++y)
    for (std::uint32_t x = 0; x < expected.w; ++x)
      for (std::uint32_t c = 0; c < expected.c; ++c) {
        if (expected.at(y, x, c) == actual.at(y, x, c)) continue;
        if (d.match) {
          d.match = false;
          d.y = y;
          d.x = x;
          d.c = c;
          d.expected = expected.at(y, x, c);
          d.actual = actual.at(y, x, c);
        }
        ++d.mismatches;
      }
  return d;
}

}  // namespace bitcache
