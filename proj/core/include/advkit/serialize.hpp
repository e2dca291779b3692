#pragma once

#include <cstdint>
#include <string>

#include "advkit/models.hpp"

namespace advkit {

// Model files: magic "ADVB", little-endian u32 format version (currently 1),
// u32 length-prefixed JSON header (kind, architecture, parameter table,
// training-config echo, seed), then the raw float32 little-endian parameter
// payload. Identical models produce byte-identical files; load(save(m))
// reproduces parameters bit-exactly. Timestamps never enter the payload.
inline constexpr uint32_t kModelFormatVersion = 1;

void save_classifier(const Classifier& model, const std::string& path,
                     const std::string& config_echo_json = "{}", uint64_t seed = 0);
void save_autoencoder(const Autoencoder& model, const std::string& path,
                      const std::string& config_echo_json = "{}", uint64_t seed = 0);
void save_preprocessor(const Preprocessor& model, const std::string& path,
                       const std::string& config_echo_json = "{}", uint64_t seed = 0);

Classifier load_classifier(const std::string& path);
Autoencoder load_autoencoder(const std::string& path);
Preprocessor load_preprocessor(const std::string& path);

// Kind string stored in the header ("classifier" | "autoencoder" |
// "preprocessor") without loading parameters.
std::string model_kind(const std::string& path);

}  // namespace advkit
