// SPDX-License-Identifier: Apache-2.0
#include "sganet/training.hpp"

namespace sganet {

namespace fs = std::filesystem;

namespace {

std::string matrix_file(char which, Modality m) {
  return std::string("w") + which + "_" + std::string(modality_name(m)) + ".ft32";
}

}  // namespace

void save_params(const fs::path& dir, const ProjectionParamsd& params) {
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["shared"] = params.shared;
  manifest["matrices"] = nlohmann::json::array();
  for (int s = 0; s < params.num_sets(); ++s) {
    const auto m = static_cast<Modality>(s);
    const auto& set = params.sets[s];
    const std::pair<char, const Matrixd*> entries[] = {{'q', &set.wq}, {'k', &set.wk}, {'v', &set.wv}};
    for (const auto& [which, w] : entries) {
      const auto name = matrix_file(which, m);
      write_tensor(dir / name, to_tensor(*w));
      manifest["matrices"].push_back({{"file", name},
                                      {"role", std::string("w") + which},
                                      {"modality", std::string(modality_name(m))},
                                      {"rows", w->rows()},
                                      {"cols", w->cols()}});
    }
  }
  write_json(dir / "params.json", manifest);
}

ProjectionParamsd load_params(const fs::path& dir) {
  const auto manifest = read_json(dir / "params.json");
  ProjectionParamsd params;
  params.shared = manifest.value("shared", false);
  for (int s = 0; s < params.num_sets(); ++s) {
    const auto m = static_cast<Modality>(s);
    auto& set = params.sets[s];
    set.wq = to_matrix<double>(read_tensor(dir / matrix_file('q', m)));
    set.wk = to_matrix<double>(read_tensor(dir / matrix_file('k', m)));
    set.wv = to_matrix<double>(read_tensor(dir / matrix_file('v', m)));
    for (const Matrixd* w : {&set.wq, &set.wk, &set.wv}) {
      if (w->rows() != w->cols()) throw DataError("projection matrices must be square");
    }
  }
  if (params.shared) params.sets[1] = params.sets[0];
  return params;
}

}  // namespace sganet
