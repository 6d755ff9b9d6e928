// Copyright 2026 The xspec Authors
// SPDX-License-Identifier: Apache-2.0

#include "xspec/checkpoint.hpp"

#include "xspec/text.hpp"

#include <fstream>
#include <map>
#include <sstream>

namespace xspec {

namespace {

struct ArrayEntry {
  Index rows = 0;
  Index cols = 0;
  std::uint64_t offset = 0;
};

}  // namespace

void save_checkpoint(const ModelParams& params, const ModelConfig& config,
                     const std::filesystem::path& path) {
  check_param_shapes(params, config);
  std::ostringstream header;
  header << kCheckpointVersion << "\n";
  for (const auto& [k, v] : model_config_entries(config)) header << "meta " << k << " " << v << "\n";
  std::uint64_t offset = 0;
  for_each_param(params, [&](const std::string& name, const Matrix& m) {
    header << "array " << name << " " << m.rows() << " " << m.cols() << " " << offset << "\n";
    offset += static_cast<std::uint64_t>(m.size()) * sizeof(Scalar);
  });
  header << "data\n";

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot open checkpoint for writing: " + tmp.string());
    const std::string h = header.str();
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    for_each_param(params, [&](const std::string&, const Matrix& m) {
      out.write(reinterpret_cast<const char*>(m.data()),
                static_cast<std::streamsize>(m.size() * sizeof(Scalar)));
    });
    if (!out) throw IoError("checkpoint write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());

  std::string line;
  if (!std::getline(in, line) || line != kCheckpointVersion) {
    throw ParseError(path.string() + ": not an " + std::string(kCheckpointVersion) + " file");
  }
  Checkpoint ck;
  std::map<std::string, ArrayEntry> arrays;
  int line_no = 1;
  bool saw_data = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line == "data") {
      saw_data = true;
      break;
    }
    const auto fields = split(line, ' ');
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (fields.size() == 3 && fields[0] == "meta") {
      if (!set_model_config_field(ck.config, fields[1], fields[2])) {
        throw ParseError(where + ": unknown meta key " + fields[1]);
      }
    } else if (fields.size() == 5 && fields[0] == "array") {
      long long r = 0, c = 0, off = 0;
      if (!parse_int(fields[2], r) || !parse_int(fields[3], c) || !parse_int(fields[4], off) ||
          r < 0 || c < 0 || off < 0) {
        throw ParseError(where + ": bad array entry");
      }
      arrays[fields[1]] = {r, c, static_cast<std::uint64_t>(off)};
    } else {
      throw ParseError(where + ": unrecognized header line");
    }
  }
  if (!saw_data) throw ParseError(path.string() + ": missing data section");
  ck.config.validate();

  const std::streampos data_start = in.tellg();
  ck.params = zeros_like(init_params(ck.config, 0));
  for_each_param(ck.params, [&](const std::string& name, Matrix& m) {
    const auto it = arrays.find(name);
    if (it == arrays.end()) throw ParseError(path.string() + ": missing array " + name);
    const ArrayEntry& e = it->second;
    if (e.rows != m.rows() || e.cols != m.cols()) {
      throw ShapeError(path.string() + ": array " + name + " stored as [" +
                       std::to_string(e.rows) + "x" + std::to_string(e.cols) +
                       "], config implies " + shape_string(m));
    }
    in.seekg(data_start + static_cast<std::streamoff>(e.offset));
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(Scalar)));
    if (!in) throw ParseError(path.string() + ": truncated payload for " + name);
  });
  return ck;
}

}  // namespace xspec
