#include "ftlab/io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ftlab/error.hpp"

namespace ftlab {

static_assert(std::endian::native == std::endian::little, "binary artifacts assume a little-endian host");

namespace {

constexpr char kMagic[8] = {'F', 'T', 'L', 'B', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

namespace fs = std::filesystem;

void ensure_parent(const fs::path& path) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
}

Json tensor_table(const ParamStore& store) {
  Json out = Json::array();
  for (const auto& [name, t] : store.entries()) out.push_back(Json{{"name", name}, {"shape", t.shape()}});
  return out;
}

void write_binary(const fs::path& path, const Json& header, const std::vector<const ParamStore*>& stores) {
  ensure_parent(path);
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    const std::string text = header.dump();
    const std::uint64_t len = text.size();
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto* store : stores)
      for (const auto& [name, t] : store->entries())
        out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!out) throw IoError("short write to " + path.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " into place: " + ec.message());
}

struct BinaryFile {
  Json header;
  std::ifstream in;
};

BinaryFile open_binary(const fs::path& path) {
  BinaryFile f;
  f.in.open(path, std::ios::binary);
  if (!f.in) throw IoError("cannot read " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  f.in.read(magic, sizeof magic);
  f.in.read(reinterpret_cast<char*>(&version), sizeof version);
  f.in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!f.in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw IoError(path.string() + ": not a checkpoint");
  if (version != kVersion) throw IoError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  std::string text(len, '\0');
  f.in.read(text.data(), static_cast<std::streamsize>(len));
  if (!f.in) throw IoError(path.string() + ": truncated header");
  try {
    f.header = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": corrupt header");
  }
  return f;
}

ParamStore read_tensors(BinaryFile& f, const Json& table, const fs::path& path) {
  ParamStore store;
  for (const auto& entry : table) {
    const Shape shape = entry.at("shape").get<Shape>();
    std::vector<double> values(shape_numel(shape));
    f.in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!f.in) throw IoError(path.string() + ": truncated tensor data");
    store.add(entry.at("name").get<std::string>(), Tensor::from(shape, std::move(values)));
  }
  return store;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_number(const std::string& s, const std::string& source, std::size_t line, const std::string& column) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
    throw ParseError(source, line, "column " + column + ": '" + s + "' is not a number");
  return v;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

void save_checkpoint(const fs::path& path, const PeftModel& model, const Json& meta) {
  const ParamStore& base = model.base().params();
  const ParamStore& attach = model.attachment().params();
  const Json header{{"kind", "peft"},
                    {"model", to_json(model.base().config())},
                    {"peft", to_json(model.spec())},
                    {"meta", meta},
                    {"base", tensor_table(base)},
                    {"attachment", tensor_table(attach)}};
  write_binary(path, header, {&base, &attach});
}

PeftModel load_checkpoint(const fs::path& path, Json* meta) {
  auto f = open_binary(path);
  if (f.header.value("kind", "") != "peft") throw IoError(path.string() + ": not a fine-tuning checkpoint");
  try {
    const ModelConfig cfg = model_config_from_json(f.header.at("model"));
    const PeftSpec spec = peft_spec_from_json(f.header.at("peft"));
    ParamStore base = read_tensors(f, f.header.at("base"), path);
    ParamStore attach = read_tensors(f, f.header.at("attachment"), path);
    if (meta) *meta = f.header.at("meta");
    return PeftModel(VisionTransformer(cfg, std::move(base)), Attachment(spec, cfg, std::move(attach)));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": malformed header: " + e.what());
  }
}

void save_host(const fs::path& path, const VisionTransformer& model, const Json& meta) {
  const Json header{
      {"kind", "host"}, {"model", to_json(model.config())}, {"meta", meta}, {"base", tensor_table(model.params())}};
  write_binary(path, header, {&model.params()});
}

VisionTransformer load_host(const fs::path& path) {
  auto f = open_binary(path);
  if (f.header.value("kind", "") != "host") throw IoError(path.string() + ": not a host checkpoint");
  try {
    const ModelConfig cfg = model_config_from_json(f.header.at("model"));
    return VisionTransformer(cfg, read_tensors(f, f.header.at("base"), path));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": malformed header: " + e.what());
  }
}

std::string track_csv(const std::vector<TrackRecord>& records, const std::vector<std::string>& ood_domains) {
  std::ostringstream out;
  out << "step,train_acc,test_acc,adv_acc";
  for (const auto& d : ood_domains) out << ",ood_" << d;
  out << ",train_loss,checkpoint_id\n";
  for (const auto& r : records) {
    out << r.step << ',' << format_double(r.train_acc) << ',' << format_double(r.test_acc) << ',';
    if (r.adv_acc) out << format_double(*r.adv_acc);
    for (const auto& d : ood_domains) {
      out << ',';
      auto it = r.ood.find(d);
      if (it != r.ood.end()) out << format_double(it->second);
    }
    out << ',' << format_double(r.train_loss) << ',' << r.checkpoint_id << '\n';
  }
  return out.str();
}

void write_track_csv(const fs::path& path, const std::vector<TrackRecord>& records,
                     const std::vector<std::string>& ood_domains) {
  write_text(path, track_csv(records, ood_domains));
}

std::vector<TrackRecord> parse_track_csv(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) throw ParseError(source, 1, "missing header");
  const auto header = split(line, ',');
  const std::vector<std::string> fixed_front{"step", "train_acc", "test_acc", "adv_acc"};
  if (header.size() < 6 || !std::equal(fixed_front.begin(), fixed_front.end(), header.begin()) ||
      header[header.size() - 2] != "train_loss" || header.back() != "checkpoint_id")
    throw ParseError(source, 1, "header must be step,train_acc,test_acc,adv_acc,ood_<domain>...,train_loss,checkpoint_id");
  std::vector<std::string> domains;
  for (std::size_t c = 4; c + 2 < header.size(); ++c) {
    if (header[c].rfind("ood_", 0) != 0 || header[c].size() == 4)
      throw ParseError(source, 1, "unexpected column '" + header[c] + "'");
    domains.push_back(header[c].substr(4));
  }

  std::vector<TrackRecord> records;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = split(line, ',');
    if (cells.size() != header.size())
      throw ParseError(source, lineno,
                       "expected " + std::to_string(header.size()) + " fields, found " + std::to_string(cells.size()));
    TrackRecord r;
    const double step = parse_number(cells[0], source, lineno, "step");
    if (step < 0 || step != std::floor(step)) throw ParseError(source, lineno, "step must be a non-negative integer");
    r.step = static_cast<std::size_t>(step);
    if (!records.empty() && r.step <= records.back().step) throw ParseError(source, lineno, "steps must increase");
    auto acc = [&](std::size_t c) {
      const double v = parse_number(cells[c], source, lineno, header[c]);
      if (!(v >= 0.0 && v <= 1.0)) throw ParseError(source, lineno, header[c] + " outside [0, 1]");
      return v;
    };
    r.train_acc = acc(1);
    r.test_acc = acc(2);
    if (!cells[3].empty()) r.adv_acc = acc(3);
    for (std::size_t i = 0; i < domains.size(); ++i)
      if (!cells[4 + i].empty()) r.ood[domains[i]] = acc(4 + i);
    r.train_loss = parse_number(cells[cells.size() - 2], source, lineno, "train_loss");
    r.checkpoint_id = cells.back();
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<TrackRecord> read_track_csv(const fs::path& path) { return parse_track_csv(read_text(path), path.string()); }

void export_dataset(const fs::path& stem, const Dataset& data, const Json& meta) {
  ensure_parent(stem);
  const fs::path bin = stem.string() + ".bin";
  {
    std::ofstream out(bin, std::ios::binary);
    if (!out) throw IoError("cannot write " + bin.string());
    out.write(reinterpret_cast<const char*>(data.pixels.data()),
              static_cast<std::streamsize>(data.pixels.size() * sizeof(double)));
    for (int label : data.labels) {
      const double v = label;
      out.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
    if (!out) throw IoError("short write to " + bin.string());
  }
  std::vector<std::size_t> counts(data.num_classes, 0);
  for (int label : data.labels) ++counts.at(static_cast<std::size_t>(label));
  const Json manifest{{"format", "ftlab-dataset-1"},
                      {"file", bin.filename().string()},
                      {"dtype", "float64-le"},
                      {"layout", "pixels [N x C x H x W] then labels [N]"},
                      {"shape", {data.size(), data.channels, data.height, data.width}},
                      {"num_classes", data.num_classes},
                      {"class_counts", counts},
                      {"meta", meta}};
  write_text(stem.string() + ".json", manifest.dump(2) + "\n");
}

Dataset import_dataset(const fs::path& stem) {
  Json manifest;
  try {
    manifest = Json::parse(read_text(stem.string() + ".json"));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(stem.string() + ".json: malformed manifest");
  }
  Dataset d;
  const auto shape = manifest.at("shape").get<std::vector<std::size_t>>();
  if (shape.size() != 4) throw IoError(stem.string() + ".json: shape must have four entries");
  d.channels = shape[1];
  d.height = shape[2];
  d.width = shape[3];
  d.num_classes = manifest.at("num_classes").get<std::size_t>();
  d.pixels.resize(shape[0] * d.sample_size());
  std::vector<double> labels(shape[0]);
  const fs::path bin = stem.string() + ".bin";
  std::ifstream in(bin, std::ios::binary);
  if (!in) throw IoError("cannot read " + bin.string());
  in.read(reinterpret_cast<char*>(d.pixels.data()), static_cast<std::streamsize>(d.pixels.size() * sizeof(double)));
  in.read(reinterpret_cast<char*>(labels.data()), static_cast<std::streamsize>(labels.size() * sizeof(double)));
  if (!in) throw IoError(bin.string() + ": truncated");
  for (double v : labels) d.labels.push_back(static_cast<int>(v));
  return d;
}

void write_text(const fs::path& path, const std::string& text) {
  ensure_parent(path);
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("short write to " + path.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " into place: " + ec.message());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace ftlab
