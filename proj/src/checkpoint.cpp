#include "avcap/checkpoint.hpp"

#include <sstream>

#include "avcap/io_util.hpp"

namespace avcap {

namespace {
constexpr char kMagic[5] = {'A', 'V', 'C', 'K', '1'};
}

std::string encode_model_config(const ModelConfig& c) {
  std::ostringstream os;
  os << "enc_blocks=" << c.enc_blocks << '\n'
     << "dec_blocks=" << c.dec_blocks << '\n'
     << "heads=" << c.heads << '\n'
     << "d_audio=" << c.d_audio << '\n'
     << "d_visual=" << c.d_visual << '\n'
     << "d_embed=" << c.d_embed << '\n'
     << "ffn_audio=" << c.ffn_audio << '\n'
     << "ffn_visual=" << c.ffn_visual << '\n'
     << "ffn_decoder=" << c.ffn_decoder << '\n'
     << "det_channels=" << c.det_channels << '\n'
     << "det_kernel=" << c.det_kernel << '\n'
     << "det_ffn_hidden=" << c.det_ffn_hidden << '\n'
     << "vocab_size=" << c.vocab_size << '\n'
     << "dropout=" << fmt_fixed(c.dropout) << '\n'
     << "max_decode_len=" << c.max_decode_len << '\n';
  return os.str();
}

ModelConfig decode_model_config(const std::string& text) {
  ModelConfig c;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError("checkpoint: malformed config line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    auto as_size = [&] { return static_cast<std::size_t>(std::stoull(val)); };
    if (key == "enc_blocks") c.enc_blocks = as_size();
    else if (key == "dec_blocks") c.dec_blocks = as_size();
    else if (key == "heads") c.heads = as_size();
    else if (key == "d_audio") c.d_audio = as_size();
    else if (key == "d_visual") c.d_visual = as_size();
    else if (key == "d_embed") c.d_embed = as_size();
    else if (key == "ffn_audio") c.ffn_audio = as_size();
    else if (key == "ffn_visual") c.ffn_visual = as_size();
    else if (key == "ffn_decoder") c.ffn_decoder = as_size();
    else if (key == "det_channels") c.det_channels = as_size();
    else if (key == "det_kernel") c.det_kernel = as_size();
    else if (key == "det_ffn_hidden") c.det_ffn_hidden = as_size();
    else if (key == "vocab_size") c.vocab_size = as_size();
    else if (key == "dropout") c.dropout = std::stod(val);
    else if (key == "max_decode_len") c.max_decode_len = as_size();
    else throw IoError("checkpoint: unknown config key '" + key + "'");
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  std::ofstream os = open_out_binary(path);
  os.write(kMagic, 5);
  put_string(os, encode_model_config(model.config()));
  const auto& params = model.parameters();
  put_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    put_string(os, name);
    put_u32(os, static_cast<std::uint32_t>(t.dims.size()));
    for (std::size_t d : t.dims) put_u32(os, static_cast<std::uint32_t>(d));
    for (float v : *t.data) put_f32(os, v);
  }
  if (!os) throw IoError("checkpoint write failed: " + path.string());
}

std::unique_ptr<Model> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is = open_in_binary(path);
  char magic[5];
  is.read(magic, 5);
  if (!is || std::memcmp(magic, kMagic, 5) != 0)
    throw IoError("checkpoint: bad magic in " + path.string());
  const ModelConfig cfg = decode_model_config(get_string(is));
  auto model = std::make_unique<Model>(cfg, /*param_seed=*/0);
  const std::uint32_t count = get_u32(is);
  if (count != model->parameters().size())
    throw IoError("checkpoint: parameter count mismatch in " + path.string());
  for (auto& [name, t] : model->parameters()) {
    const std::string got = get_string(is);
    if (got != name)
      throw IoError("checkpoint: parameter order mismatch, expected " + name + " got " + got);
    const std::uint32_t rank = get_u32(is);
    if (rank != t.dims.size()) throw IoError("checkpoint: rank mismatch for " + name);
    for (std::size_t d : t.dims)
      if (get_u32(is) != d) throw IoError("checkpoint: shape mismatch for " + name);
    for (float& v : *t.data) v = get_f32(is);
  }
  return model;
}

}  // namespace avcap
