#include "advkit/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace advkit {

static_assert(std::endian::native == std::endian::little,
              "model files are serialized little-endian");

namespace {

using nlohmann::json;

json layer_to_json(const LayerSpec& spec) {
  json j;
  if (const auto* d = std::get_if<DenseLayer>(&spec)) {
    j["type"] = "dense";
    j["in"] = d->in;
    j["out"] = d->out;
  } else if (const auto* c = std::get_if<Conv2dLayer>(&spec)) {
    j["type"] = "conv2d";
    j["in_channels"] = c->in_channels;
    j["out_channels"] = c->out_channels;
    j["kernel"] = c->kernel;
    j["stride"] = c->stride;
    j["pad"] = c->pad;
  } else if (const auto* a = std::get_if<ActLayer>(&spec)) {
    j["type"] = "act";
    j["act"] = activation_name(a->act);
  } else if (std::holds_alternative<FlattenLayer>(spec)) {
    j["type"] = "flatten";
  } else if (const auto* u = std::get_if<UnflattenLayer>(&spec)) {
    j["type"] = "unflatten";
    j["dims"] = u->dims;
  }
  return j;
}

LayerSpec layer_from_json(const json& j) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "dense") return DenseLayer{j.at("in").get<int64_t>(), j.at("out").get<int64_t>()};
  if (type == "conv2d")
    return Conv2dLayer{j.at("in_channels").get<int64_t>(), j.at("out_channels").get<int64_t>(),
                       j.at("kernel").get<int>(), j.at("stride").get<int>(), j.at("pad").get<int>()};
  if (type == "act") return ActLayer{activation_from_name(j.at("act").get<std::string>())};
  if (type == "flatten") return FlattenLayer{};
  if (type == "unflatten") return UnflattenLayer{j.at("dims").get<Shape>()};
  throw Error("model file: unknown layer type '" + type + "'");
}

void write_model(const LayerStack& stack, const std::string& kind, int64_t classes,
                 const std::string& path, const std::string& config_echo_json, uint64_t seed) {
  json header;
  header["kind"] = kind;
  header["input_shape"] = stack.input_shape();
  if (classes > 0) header["classes"] = classes;
  json layers = json::array();
  for (const LayerSpec& spec : stack.layers()) layers.push_back(layer_to_json(spec));
  header["layers"] = layers;
  json params = json::array();
  const auto names = stack.param_names();
  for (std::size_t i = 0; i < stack.params().size(); ++i) {
    json p;
    p["name"] = names[i];
    p["shape"] = stack.params()[i].shape();
    params.push_back(p);
  }
  header["params"] = params;
  header["training_config"] = json::parse(config_echo_json);
  header["seed"] = seed;

  const std::string head = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("save model: cannot open '" + path + "' for writing");
  out.write("ADVB", 4);
  const uint32_t version = kModelFormatVersion;
  out.write(reinterpret_cast<const char*>(&version), 4);
  const uint32_t head_len = static_cast<uint32_t>(head.size());
  out.write(reinterpret_cast<const char*>(&head_len), 4);
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  for (const TensorF& p : stack.params())
    out.write(reinterpret_cast<const char*>(p.values().data()),
              static_cast<std::streamsize>(p.values().size() * sizeof(float)));
  if (!out) throw Error("save model: write failed for '" + path + "'");
}

struct ParsedModel {
  json header;
  std::vector<std::vector<float>> blobs;
};

ParsedModel read_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("load model: cannot open '" + path + "'");
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "ADVB", 4) != 0)
    throw Error("load model: '" + path + "' is not a model file (bad magic)");
  uint32_t version = 0;
  if (!in.read(reinterpret_cast<char*>(&version), 4))
    throw Error("load model: truncated header in '" + path + "'");
  if (version != kModelFormatVersion)
    throw Error("load model: unsupported format version " + std::to_string(version) +
                " (expected " + std::to_string(kModelFormatVersion) + ")");
  uint32_t head_len = 0;
  if (!in.read(reinterpret_cast<char*>(&head_len), 4))
    throw Error("load model: truncated header in '" + path + "'");
  std::string head(head_len, '\0');
  if (!in.read(head.data(), head_len))
    throw Error("load model: truncated header in '" + path + "'");

  ParsedModel m;
  m.header = json::parse(head);
  for (const json& p : m.header.at("params")) {
    const Shape shape = p.at("shape").get<Shape>();
    std::vector<float> blob(static_cast<std::size_t>(shape_numel(shape)));
    if (!in.read(reinterpret_cast<char*>(blob.data()),
                 static_cast<std::streamsize>(blob.size() * sizeof(float))))
      throw Error("load model: truncated parameter payload in '" + path + "'");
    m.blobs.push_back(std::move(blob));
  }
  return m;
}

std::pair<Shape, std::vector<LayerSpec>> arch_from_header(const json& header) {
  Shape input_shape = header.at("input_shape").get<Shape>();
  std::vector<LayerSpec> layers;
  for (const json& lj : header.at("layers")) layers.push_back(layer_from_json(lj));
  return {std::move(input_shape), std::move(layers)};
}

}  // namespace

void save_classifier(const Classifier& model, const std::string& path,
                     const std::string& config_echo_json, uint64_t seed) {
  write_model(model.stack(), "classifier", model.classes(), path, config_echo_json, seed);
}

void save_autoencoder(const Autoencoder& model, const std::string& path,
                      const std::string& config_echo_json, uint64_t seed) {
  write_model(model.stack(), "autoencoder", 0, path, config_echo_json, seed);
}

void save_preprocessor(const Preprocessor& model, const std::string& path,
                       const std::string& config_echo_json, uint64_t seed) {
  write_model(model.stack(), "preprocessor", 0, path, config_echo_json, seed);
}

Classifier load_classifier(const std::string& path) {
  ParsedModel m = read_model(path);
  if (m.header.at("kind") != "classifier")
    throw Error("load model: '" + path + "' holds a " +
                m.header.at("kind").get<std::string>() + ", expected a classifier");
  auto [input_shape, layers] = arch_from_header(m.header);
  Classifier c(std::move(input_shape), std::move(layers), m.header.at("classes").get<int64_t>(), 0);
  c.stack().load_params(m.blobs);
  return c;
}

Autoencoder load_autoencoder(const std::string& path) {
  ParsedModel m = read_model(path);
  if (m.header.at("kind") != "autoencoder")
    throw Error("load model: '" + path + "' holds a " +
                m.header.at("kind").get<std::string>() + ", expected an autoencoder");
  auto [input_shape, layers] = arch_from_header(m.header);
  LayerStack stack(std::move(input_shape), std::move(layers), 0);
  stack.load_params(m.blobs);
  Autoencoder ae;
  ae.stack() = std::move(stack);
  return ae;
}

Preprocessor load_preprocessor(const std::string& path) {
  ParsedModel m = read_model(path);
  if (m.header.at("kind") != "preprocessor")
    throw Error("load model: '" + path + "' holds a " +
                m.header.at("kind").get<std::string>() + ", expected a preprocessor");
  auto [input_shape, layers] = arch_from_header(m.header);
  LayerStack stack(std::move(input_shape), std::move(layers), 0);
  stack.load_params(m.blobs);
  Preprocessor g;
  g.stack() = std::move(stack);
  return g;
}

std::string model_kind(const std::string& path) {
  return read_model(path).header.at("kind").get<std::string>();
}

}  // namespace advkit
