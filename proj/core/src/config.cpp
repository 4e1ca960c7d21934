#include "g2n/config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace g2n {
namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::string& where,
                const std::set<std::string>& allowed) {
  G2N_CHECK(obj.is_object(), "config: ", where, " must be an object");
  for (auto it = obj.begin(); it != obj.end(); ++it)
    G2N_CHECK(allowed.count(it.key()), "config: unknown key '", it.key(),
              "' in ", where);
}

PoolKind parse_pool_kind(const json& v, const std::string& where) {
  const std::string s = v.get<std::string>();
  if (s == "max") return PoolKind::Max;
  if (s == "avg") return PoolKind::Avg;
  fail("config: ", where, " must be \"max\" or \"avg\", got \"", s, "\"");
}

Fusion parse_fusion(const json& v) {
  const std::string s = v.get<std::string>();
  if (s == "addition") return Fusion::Addition;
  if (s == "concatenation") return Fusion::Concatenation;
  fail("config: fusion must be \"addition\" or \"concatenation\", got \"", s,
       "\"");
}

ConvDesc parse_conv_desc(const json& v, const std::string& where) {
  check_keys(v, where, {"out_channels", "kernel", "stride", "padding"});
  ConvDesc d;
  d.out_channels = v.at("out_channels").get<int64_t>();
  if (v.contains("kernel")) d.kernel = v.at("kernel").get<int>();
  if (v.contains("stride")) d.stride = v.at("stride").get<int>();
  if (v.contains("padding")) d.padding = v.at("padding").get<int>();
  G2N_CHECK(d.out_channels >= 1, "config: ", where, " out_channels must be >= 1");
  return d;
}

PoolDesc parse_pool_desc(const json& v, const std::string& where) {
  check_keys(v, where, {"kernel", "stride", "padding"});
  PoolDesc d;
  if (v.contains("kernel")) d.kernel = v.at("kernel").get<int>();
  if (v.contains("stride")) d.stride = v.at("stride").get<int>();
  if (v.contains("padding")) d.padding = v.at("padding").get<int>();
  return d;
}

BranchWidths parse_widths(const json& v, const std::string& where) {
  G2N_CHECK(v.is_array() && v.size() == 6, "config: ", where,
            " must be a 6-element width array [b1, b2_reduce, b2, b3_reduce, "
            "b3, b4]");
  BranchWidths w;
  w.b1 = v[0].get<int64_t>();
  w.b2_reduce = v[1].get<int64_t>();
  w.b2 = v[2].get<int64_t>();
  w.b3_reduce = v[3].get<int64_t>();
  w.b3 = v[4].get<int64_t>();
  w.b4 = v[5].get<int64_t>();
  return w;
}

TrainConfig parse_train(const json& v) {
  check_keys(v, "train",
             {"dataset", "epochs", "batch_size", "lr", "momentum",
              "weight_decay", "plateau_patience", "augment", "val_fraction",
              "train_subset", "eval_subset"});
  TrainConfig t;
  t.dataset = v.at("dataset").get<std::string>();
  G2N_CHECK(t.dataset == "mnist" || t.dataset == "cifar10",
            "config: train.dataset must be \"mnist\" or \"cifar10\", got \"",
            t.dataset, "\"");
  if (v.contains("epochs")) t.epochs = v.at("epochs").get<int>();
  if (v.contains("batch_size")) t.batch_size = v.at("batch_size").get<int>();
  if (v.contains("lr")) t.lr = v.at("lr").get<double>();
  if (v.contains("momentum")) t.momentum = v.at("momentum").get<double>();
  if (v.contains("weight_decay"))
    t.weight_decay = v.at("weight_decay").get<double>();
  if (v.contains("plateau_patience"))
    t.plateau_patience = v.at("plateau_patience").get<int>();
  if (v.contains("augment")) t.augment = v.at("augment").get<bool>();
  if (v.contains("val_fraction"))
    t.val_fraction = v.at("val_fraction").get<double>();
  if (v.contains("train_subset"))
    t.train_subset = v.at("train_subset").get<int64_t>();
  if (v.contains("eval_subset"))
    t.eval_subset = v.at("eval_subset").get<int64_t>();
  G2N_CHECK(t.epochs >= 0, "config: train.epochs must be >= 0");
  G2N_CHECK(t.batch_size >= 1, "config: train.batch_size must be >= 1");
  G2N_CHECK(t.val_fraction > 0.0 && t.val_fraction < 1.0,
            "config: train.val_fraction must be in (0, 1)");
  return t;
}

}  // namespace

NetworkConfig parse_network_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const std::exception& e) {
    fail("config: JSON parse failure: ", e.what());
  }
  check_keys(doc, "document root",
             {"name", "fusion", "split", "input_shape", "classes", "stem",
              "stages", "head", "pool_kind", "branch_pool_kind",
              "use_residual", "use_transverse", "prune_ratio", "seed",
              "train"});
  NetworkConfig cfg;
  cfg.name = doc.at("name").get<std::string>();
  cfg.fusion = parse_fusion(doc.at("fusion"));
  cfg.split = doc.at("split").get<bool>();

  const json& shape = doc.at("input_shape");
  G2N_CHECK(shape.is_array() && shape.size() == 3,
            "config: input_shape must be [C, H, W]");
  cfg.in_channels = shape[0].get<int64_t>();
  cfg.in_h = shape[1].get<int64_t>();
  cfg.in_w = shape[2].get<int64_t>();

  cfg.classes = doc.at("classes").get<int64_t>();
  G2N_CHECK(cfg.classes >= 2, "config: classes must be >= 2, got ", cfg.classes);

  const json& stem = doc.at("stem");
  G2N_CHECK(stem.is_array() && !stem.empty(),
            "config: stem must be a non-empty array of conv descriptors");
  for (size_t i = 0; i < stem.size(); ++i)
    cfg.stem.push_back(
        parse_conv_desc(stem[i], "stem[" + std::to_string(i) + "]"));

  const json& stages = doc.at("stages");
  G2N_CHECK(stages.is_array() && !stages.empty(),
            "config: stages must be a non-empty array");
  for (size_t s = 0; s < stages.size(); ++s) {
    const std::string where = "stages[" + std::to_string(s) + "]";
    check_keys(stages[s], where, {"blocks", "pool_after"});
    StageConfig stage;
    const json& blocks = stages[s].at("blocks");
    G2N_CHECK(blocks.is_array() && !blocks.empty(), "config: ", where,
              ".blocks must be a non-empty array");
    for (size_t b = 0; b < blocks.size(); ++b)
      stage.blocks.push_back(parse_widths(
          blocks[b], where + ".blocks[" + std::to_string(b) + "]"));
    if (stages[s].contains("pool_after"))
      stage.pool_after =
          parse_pool_desc(stages[s].at("pool_after"), where + ".pool_after");
    cfg.stages.push_back(std::move(stage));
  }

  const json& head = doc.at("head");
  check_keys(head, "head", {"pool", "dropout"});
  cfg.head_pool = parse_pool_kind(head.at("pool"), "head.pool");
  if (head.contains("dropout")) cfg.dropout = head.at("dropout").get<double>();
  G2N_CHECK(cfg.dropout >= 0.0 && cfg.dropout < 1.0,
            "config: head.dropout must be in [0, 1)");

  if (doc.contains("pool_kind"))
    cfg.pool_kind = parse_pool_kind(doc.at("pool_kind"), "pool_kind");
  if (doc.contains("branch_pool_kind"))
    cfg.branch_pool_kind =
        parse_pool_kind(doc.at("branch_pool_kind"), "branch_pool_kind");
  if (doc.contains("use_residual"))
    cfg.use_residual = doc.at("use_residual").get<bool>();
  if (doc.contains("use_transverse"))
    cfg.use_transverse = doc.at("use_transverse").get<bool>();
  if (doc.contains("prune_ratio"))
    cfg.prune_ratio = doc.at("prune_ratio").get<double>();
  G2N_CHECK(cfg.prune_ratio >= 0.0 && cfg.prune_ratio <= 1.0,
            "config: prune_ratio must be in [0, 1], got ", cfg.prune_ratio);
  if (doc.contains("seed")) cfg.seed = doc.at("seed").get<uint64_t>();
  if (doc.contains("train")) cfg.train = parse_train(doc.at("train"));
  return cfg;
}

NetworkConfig load_network_config(const std::string& path) {
  std::ifstream in(path);
  G2N_CHECK(in.good(), "config: cannot open '", path, "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_network_config(ss.str());
}

std::string apply_config_override(const std::string& json_text,
                                  const std::string& assignment) {
  const size_t eq = assignment.find('=');
  G2N_CHECK(eq != std::string::npos && eq > 0,
            "override: expected key=value, got '", assignment, "'");
  const std::string path = assignment.substr(0, eq);
  const std::string value_text = assignment.substr(eq + 1);

  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const std::exception& e) {
    fail("config: JSON parse failure: ", e.what());
  }

  std::vector<std::string> keys;
  std::stringstream ps(path);
  std::string seg;
  while (std::getline(ps, seg, '.')) keys.push_back(seg);
  G2N_CHECK(!keys.empty(), "override: empty key in '", assignment, "'");

  json* node = &doc;
  for (size_t i = 0; i + 1 < keys.size(); ++i) {
    G2N_CHECK(node->is_object() && node->contains(keys[i]),
              "override: key '", keys[i], "' not found in config");
    node = &(*node)[keys[i]];
  }
  const std::string& leaf = keys.back();
  G2N_CHECK(node->is_object() && node->contains(leaf), "override: key '", leaf,
            "' not found in config");

  json value;
  try {
    value = json::parse(value_text);
  } catch (const std::exception&) {
    value = value_text;  // bare strings ("avg", "mnist") need no quotes
  }
  (*node)[leaf] = value;
  return doc.dump(2);
}

}  // namespace g2n
