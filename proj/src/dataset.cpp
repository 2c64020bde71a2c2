// Copyright 2026 The Mixpert Authors.
// SPDX-License-Identifier: Apache-2.0

#include "mixpert/dataset.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "mixpert/error.hpp"
#include "mixpert/keyvalue.hpp"
#include "mixpert/rng.hpp"

namespace mixpert {

namespace {

constexpr int kSide = static_cast<int>(kImageSize);

// Float canvas the renderers draw into before quantization.
class Canvas {
 public:
  explicit Canvas(double background) { px_.fill(background); }

  double& at(int x, int y) { return px_[std::size_t(y) * kSide + std::size_t(x)]; }
  double at(int x, int y) const { return px_[std::size_t(y) * kSide + std::size_t(x)]; }
  static bool inside(int x, int y) { return x >= 0 && y >= 0 && x < kSide && y < kSide; }

  void set(int x, int y, double v) {
    if (inside(x, y)) at(x, y) = v;
  }

  void fill_rect(int x0, int y0, int x1, int y1, double v) {
    for (int y = std::max(0, y0); y < std::min(kSide, y1); ++y) {
      for (int x = std::max(0, x0); x < std::min(kSide, x1); ++x) at(x, y) = v;
    }
  }

  // Thick segment: every pixel within `radius` of the segment gets `v`.
  void stroke(double x0, double y0, double x1, double y1, double radius, double v) {
    const double dx = x1 - x0, dy = y1 - y0;
    const double len2 = dx * dx + dy * dy;
    for (int y = 0; y < kSide; ++y) {
      for (int x = 0; x < kSide; ++x) {
        double t = len2 > 0 ? ((x - x0) * dx + (y - y0) * dy) / len2 : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        const double ex = x0 + t * dx - x, ey = y0 + t * dy - y;
        if (ex * ex + ey * ey <= radius * radius) at(x, y) = v;
      }
    }
  }

  void ring(double cx, double cy, double r, double half_width, double v) {
    for (int y = 0; y < kSide; ++y) {
      for (int x = 0; x < kSide; ++x) {
        const double dist = std::hypot(x - cx, y - cy);
        if (std::abs(dist - r) <= half_width) at(x, y) = v;
      }
    }
  }

  void add_noise(Rng& rng, double sigma) {
    for (double& p : px_) p += sigma * rng.normal();
  }

  Sample finish(DomainLabel domain, int label) const {
    Sample s;
    s.domain = domain;
    s.task_label = static_cast<std::uint16_t>(label);
    s.pixels.resize(kPixels);
    for (std::size_t i = 0; i < kPixels; ++i) s.pixels[i] = quantize_pixel(px_[i]);
    return s;
  }

 private:
  std::array<double, kPixels> px_{};
};

Sample render_chart(Rng& rng) {
  Canvas c(rng.uniform(0.03, 0.18));
  const double axis = rng.uniform(0.55, 0.8);
  c.fill_rect(2, 2, 3, 29, axis);
  c.fill_rect(2, 28, 31, 29, axis);
  const int bars = rng.uniform_int(2, 6);
  const double slot = 26.0 / bars;
  for (int i = 0; i < bars; ++i) {
    const int width = rng.uniform_int(2, 3);
    const int room = std::max(0, int(slot) - width - 1);
    const int x = 4 + int(i * slot) + rng.uniform_int(0, room);
    const int height = rng.uniform_int(4, 24);
    c.fill_rect(x, 28 - height, x + width, 28, rng.uniform(0.55, 0.95));
  }
  c.add_noise(rng, 0.05);
  return c.finish(DomainLabel::Chart, bars - 2);
}

Sample render_doc(Rng& rng) {
  Canvas c(rng.uniform(0.78, 0.95));
  const int lines = rng.uniform_int(3, 7);
  const double pitch = 27.0 / lines;
  for (int i = 0; i < lines; ++i) {
    const int y = 2 + int(i * pitch) + rng.uniform_int(0, std::max(0, int(pitch) - 3));
    int x = rng.uniform_int(2, 4);
    const int right = rng.uniform_int(16, 30);
    const double ink = rng.uniform(0.05, 0.3);
    while (x < right) {
      const int word = rng.uniform_int(2, 6);
      c.fill_rect(x, y, std::min(x + word, right), y + 2, ink);
      x += word + rng.uniform_int(1, 2);
    }
  }
  c.add_noise(rng, 0.04);
  return c.finish(DomainLabel::Doc, lines - 3);
}

Sample render_math(Rng& rng) {
  Canvas c(rng.uniform(0.28, 0.45));
  // Faint stray strokes.
  const int strays = rng.uniform_int(1, 2);
  for (int i = 0; i < strays; ++i) {
    const double x0 = rng.uniform(0, 31), y0 = rng.uniform(0, 31);
    const double angle = rng.uniform(0.3, 1.2) * (rng.bernoulli(0.5) ? 1 : -1);
    const double len = rng.uniform(6, 12);
    c.stroke(x0, y0, x0 + len * std::cos(angle), y0 + len * std::sin(angle), 0.6, rng.uniform(0.55, 0.7));
  }
  const int shape = rng.uniform_int(0, 3);
  const double cx = rng.uniform(11, 21), cy = rng.uniform(11, 21);
  const double r = rng.uniform(6, 10);
  const double ink = rng.uniform(0.85, 1.0);
  const double w = 0.75;
  switch (shape) {
    case 0:
      c.ring(cx, cy, r, w, ink);
      break;
    case 1: {
      const double ax = cx, ay = cy - r;
      const double bx = cx - r * 0.866, by = cy + r * 0.5;
      const double qx = cx + r * 0.866, qy = cy + r * 0.5;
      c.stroke(ax, ay, bx, by, w, ink);
      c.stroke(bx, by, qx, qy, w, ink);
      c.stroke(qx, qy, ax, ay, w, ink);
      break;
    }
    case 2: {
      const double h = r * 0.8;
      c.stroke(cx - h, cy - h, cx + h, cy - h, w, ink);
      c.stroke(cx + h, cy - h, cx + h, cy + h, w, ink);
      c.stroke(cx + h, cy + h, cx - h, cy + h, w, ink);
      c.stroke(cx - h, cy + h, cx - h, cy - h, w, ink);
      break;
    }
    default:
      c.stroke(cx - r, cy, cx + r, cy, w, ink);
      c.stroke(cx, cy - r, cx, cy + r, w, ink);
      break;
  }
  c.add_noise(rng, 0.04);
  return c.finish(DomainLabel::Math, shape);
}

Sample render_ocr(Rng& rng) {
  Canvas c(rng.uniform(0.0, 0.1));
  const int glyphs = rng.uniform_int(1, 6);
  // Glyphs occupy distinct cells of a 5x4 grid of 6x8 cells, jittered inside.
  std::array<int, 20> cells{};
  for (int i = 0; i < 20; ++i) cells[i] = i;
  for (int i = 19; i > 0; --i) std::swap(cells[i], cells[rng.uniform_int(0, i)]);
  for (int g = 0; g < glyphs; ++g) {
    const int cx = (cells[g] % 5) * 6 + 1 + rng.uniform_int(0, 1);
    const int cy = (cells[g] / 5) * 8 + 1 + rng.uniform_int(0, 2);
    const double ink = rng.uniform(0.85, 1.0);
    int lit = 0;
    while (lit < 6) {
      lit = 0;
      std::array<bool, 15> bits{};
      for (auto& b : bits) lit += (b = rng.bernoulli(0.6));
      if (lit < 6) continue;
      for (int i = 0; i < 15; ++i) {
        if (bits[i]) c.set(cx + i % 3, cy + i / 3, ink);
      }
    }
  }
  c.add_noise(rng, 0.03);
  return c.finish(DomainLabel::Ocr, std::uint16_t(glyphs - 1));
}

Sample render_general(Rng& rng) {
  Canvas c(0.0);
  struct Blob {
    double x, y, sigma, amp;
  };
  std::vector<Blob> blobs;
  const int quadrant = rng.uniform_int(0, 3);
  blobs.push_back({(quadrant % 2) * 16 + rng.uniform(4, 12), (quadrant / 2) * 16 + rng.uniform(4, 12),
                   rng.uniform(4, 6), rng.uniform(0.6, 0.8)});
  const int extra = rng.uniform_int(2, 4);
  for (int i = 0; i < extra; ++i) {
    blobs.push_back({rng.uniform(0, 31), rng.uniform(0, 31), rng.uniform(3, 6), rng.uniform(0.15, 0.4)});
  }
  const double base = rng.uniform(0.08, 0.2);
  std::array<double, 4> mass{};
  for (int y = 0; y < kSide; ++y) {
    for (int x = 0; x < kSide; ++x) {
      double v = base;
      for (const auto& b : blobs) {
        const double d2 = (x - b.x) * (x - b.x) + (y - b.y) * (y - b.y);
        v += b.amp * std::exp(-d2 / (2 * b.sigma * b.sigma));
      }
      c.at(x, y) = std::min(v, 0.9);
    }
  }
  c.add_noise(rng, 0.03);
  for (int y = 0; y < kSide; ++y) {
    for (int x = 0; x < kSide; ++x) mass[(y / 16) * 2 + x / 16] += std::clamp(c.at(x, y), 0.0, 1.0);
  }
  const int label = int(std::max_element(mass.begin(), mass.end()) - mass.begin());
  return c.finish(DomainLabel::General, label);
}

void put_u16(std::uint8_t* p, std::uint16_t v) {
  p[0] = std::uint8_t(v);
  p[1] = std::uint8_t(v >> 8);
}
void put_u32(std::uint8_t* p, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) p[i] = std::uint8_t(v >> (8 * i));
}
std::uint16_t get_u16(const std::uint8_t* p) { return std::uint16_t(p[0] | (p[1] << 8)); }
std::uint32_t get_u32(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}

std::uint32_t record_crc(const std::uint8_t* head5, const std::uint8_t* pixels) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, head5, 5);
  crc = crc32(crc, pixels, static_cast<uInt>(kPixels));
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::string_view domain_name(DomainLabel d) {
  switch (d) {
    case DomainLabel::Chart: return "chart";
    case DomainLabel::Doc: return "doc";
    case DomainLabel::Math: return "math";
    case DomainLabel::Ocr: return "ocr";
    case DomainLabel::General: return "general";
  }
  throw ContractError("invalid domain");
}

DomainLabel parse_domain(std::string_view name) {
  for (auto d : kAllDomains) {
    if (domain_name(d) == name) return d;
  }
  throw ConfigError("unknown domain '" + std::string(name) + "'");
}

DomainLabel domain_from_code(int code) {
  if (code < 0 || code >= int(kNumDomains)) throw ContractError("invalid domain code " + std::to_string(code));
  return static_cast<DomainLabel>(code);
}

std::size_t task_classes(DomainLabel d) {
  switch (d) {
    case DomainLabel::Chart: return 5;
    case DomainLabel::Doc: return 5;
    case DomainLabel::Math: return 4;
    case DomainLabel::Ocr: return 6;
    case DomainLabel::General: return 4;
  }
  throw ContractError("invalid domain");
}

std::uint8_t quantize_pixel(double value) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(value, 0.0, 1.0) * 255.0));
}

float quantize_ambiguity(double mix) {
  return float(std::lround(std::clamp(mix, 0.0, 1.0) * 10000.0)) / 10000.0f;
}

Tensor Sample::image() const {
  Tensor t({kImageChannels, kImageSize, kImageSize});
  for (std::size_t i = 0; i < kPixels; ++i) t.data()[i] = pixel(i);
  return t;
}

Sample generate(DomainLabel domain, std::uint64_t seed) {
  Rng rng(derive_seed({seed, domain_index(domain)}));
  switch (domain) {
    case DomainLabel::Chart: return render_chart(rng);
    case DomainLabel::Doc: return render_doc(rng);
    case DomainLabel::Math: return render_math(rng);
    case DomainLabel::Ocr: return render_ocr(rng);
    case DomainLabel::General: return render_general(rng);
  }
  throw ContractError("invalid domain");
}

Sample generate_ambiguous(DomainLabel domain_a, DomainLabel domain_b, double mix, std::uint64_t seed) {
  if (domain_a == domain_b) throw ContractError("generate_ambiguous: domains must differ");
  if (!(mix > 0.0 && mix < 1.0)) throw ContractError("generate_ambiguous: mix must lie in (0, 1)");
  Sample a = generate(domain_a, seed);
  const Sample b = generate(domain_b, derive_seed({seed, 0xB1E4D}));
  for (std::size_t i = 0; i < kPixels; ++i) {
    a.pixels[i] = quantize_pixel((1.0 - mix) * a.pixel(i) + mix * b.pixel(i));
  }
  a.ambiguity = quantize_ambiguity(mix);
  return a;
}

// --- corpus ------------------------------------------------------------------

std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    case Split::Ambiguous: return "ambiguous";
  }
  throw ContractError("invalid split");
}

std::size_t DatasetManifest::count(Split s) const {
  switch (s) {
    case Split::Train: return train_per_domain * kNumDomains;
    case Split::Val: return val_per_domain * kNumDomains;
    case Split::Test: return test_per_domain * kNumDomains;
    case Split::Ambiguous: return ambiguous_count;
  }
  return 0;
}

std::string DatasetManifest::to_text() const {
  std::string s;
  s += "generator_version = " + std::to_string(generator_version) + "\n";
  s += "seed = " + std::to_string(seed) + "\n";
  s += "train_per_domain = " + std::to_string(train_per_domain) + "\n";
  s += "val_per_domain = " + std::to_string(val_per_domain) + "\n";
  s += "test_per_domain = " + std::to_string(test_per_domain) + "\n";
  s += "ambiguous_count = " + std::to_string(ambiguous_count) + "\n";
  s += "ambiguous_mix_lo = " + format_double(ambiguous_mix_lo) + "\n";
  s += "ambiguous_mix_hi = " + format_double(ambiguous_mix_hi) + "\n";
  s += "ambiguous_fraction = " + format_double(ambiguous_fraction) + "\n";
  s += "files = " + join(files, ",") + "\n";
  return s;
}

DatasetManifest DatasetManifest::from_text(std::string_view text) {
  const auto kv = KeyValues::parse(text);
  DatasetManifest m;
  m.generator_version = static_cast<std::uint32_t>(kv.get_uint("generator_version"));
  m.seed = kv.get_uint("seed");
  m.train_per_domain = kv.get_uint("train_per_domain");
  m.val_per_domain = kv.get_uint("val_per_domain");
  m.test_per_domain = kv.get_uint("test_per_domain");
  m.ambiguous_count = kv.get_uint("ambiguous_count");
  m.ambiguous_mix_lo = kv.get_double("ambiguous_mix_lo");
  m.ambiguous_mix_hi = kv.get_double("ambiguous_mix_hi");
  m.ambiguous_fraction = kv.get_double("ambiguous_fraction");
  m.files = kv.has("files") ? kv.get_list("files") : std::vector<std::string>{};
  if (m.ambiguous_mix_lo <= 0.0 || m.ambiguous_mix_hi >= 1.0 || m.ambiguous_mix_lo > m.ambiguous_mix_hi) {
    throw ConfigError("manifest: ambiguous mix range must lie inside (0, 1)");
  }
  return m;
}

std::uint64_t sample_seed(const DatasetManifest& m, Split split, DomainLabel domain, std::size_t index) {
  return derive_seed({m.seed, m.generator_version, std::uint64_t(split) + 1, domain_index(domain), index});
}

std::vector<Sample> generate_split(const DatasetManifest& m, Split split) {
  if (m.generator_version != kGeneratorVersion) {
    throw VersionError("manifest generator version " + std::to_string(m.generator_version) + " but this build is " +
                       std::to_string(kGeneratorVersion));
  }
  std::vector<Sample> out;
  out.reserve(m.count(split));
  if (split == Split::Ambiguous) {
    for (std::size_t i = 0; i < m.ambiguous_count; ++i) {
      Rng rng(sample_seed(m, split, DomainLabel::Chart, i));
      const int a = rng.uniform_int(0, int(kNumDomains) - 1);
      int b = rng.uniform_int(0, int(kNumDomains) - 2);
      if (b >= a) ++b;
      const double mix = rng.uniform(m.ambiguous_mix_lo, m.ambiguous_mix_hi);
      out.push_back(generate_ambiguous(domain_from_code(a), domain_from_code(b), mix, rng.next()));
    }
    return out;
  }
  const std::size_t per_domain = m.count(split) / kNumDomains;
  for (auto d : kAllDomains) {
    for (std::size_t i = 0; i < per_domain; ++i) out.push_back(generate(d, sample_seed(m, split, d, i)));
  }
  return out;
}

const std::vector<Sample>& Corpus::split(Split s) const {
  switch (s) {
    case Split::Train: return train;
    case Split::Val: return val;
    case Split::Test: return test;
    case Split::Ambiguous: return ambiguous;
  }
  throw ContractError("invalid split");
}

Corpus generate_corpus(const DatasetManifest& m) {
  Corpus c;
  c.manifest = m;
  c.train = generate_split(m, Split::Train);
  c.val = generate_split(m, Split::Val);
  c.test = generate_split(m, Split::Test);
  c.ambiguous = generate_split(m, Split::Ambiguous);
  return c;
}

std::vector<Sample> nested_train_subset(const std::vector<Sample>& train, std::size_t per_domain) {
  std::vector<Sample> out;
  std::array<std::size_t, kNumDomains> taken{};
  for (const auto& s : train) {
    auto& n = taken[domain_index(s.domain)];
    if (n < per_domain) {
      out.push_back(s);
      ++n;
    }
  }
  for (auto n : taken) {
    if (n < per_domain) throw ContractError("nested subset larger than the training split");
  }
  return out;
}

std::vector<Sample> filter_domain(const std::vector<Sample>& samples, DomainLabel d) {
  std::vector<Sample> out;
  for (const auto& s : samples) {
    if (s.domain == d) out.push_back(s);
  }
  return out;
}

// --- on-disk format ----------------------------------------------------------

void write_samples(const std::filesystem::path& file, const std::vector<Sample>& samples) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + file.string() + " for writing");
  std::uint8_t header[kCorpusHeaderBytes];
  std::memcpy(header, "MXPD", 4);
  put_u32(header + 4, kCorpusVersion);
  put_u32(header + 8, static_cast<std::uint32_t>(samples.size()));
  put_u16(header + 12, kImageSize);
  put_u16(header + 14, kImageSize);
  header[16] = kImageChannels;
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  std::vector<std::uint8_t> rec(kRecordBytes);
  for (const auto& s : samples) {
    if (s.pixels.size() != kPixels) throw ContractError("sample has wrong pixel count");
    rec[0] = static_cast<std::uint8_t>(s.domain);
    put_u16(&rec[1], s.task_label);
    put_u16(&rec[3], static_cast<std::uint16_t>(std::lround(double(s.ambiguity) * 10000.0)));
    std::memcpy(&rec[kRecordHeaderBytes], s.pixels.data(), kPixels);
    put_u32(&rec[5], record_crc(&rec[0], &rec[kRecordHeaderBytes]));
    out.write(reinterpret_cast<const char*>(rec.data()), std::streamsize(rec.size()));
  }
  if (!out) throw FormatError("write failed for " + file.string());
}

CorpusReader::CorpusReader(const std::filesystem::path& file) : in_(file, std::ios::binary) {
  if (!in_) throw FormatError("cannot open " + file.string());
  std::uint8_t header[kCorpusHeaderBytes];
  in_.read(reinterpret_cast<char*>(header), sizeof(header));
  if (in_.gcount() != std::streamsize(sizeof(header))) throw TruncatedError(file.string() + ": truncated header");
  if (std::memcmp(header, "MXPD", 4) != 0) throw FormatError(file.string() + ": bad magic");
  const auto version = get_u32(header + 4);
  if (version != kCorpusVersion) {
    throw VersionError(file.string() + ": corpus version " + std::to_string(version) + ", expected " +
                       std::to_string(kCorpusVersion));
  }
  count_ = get_u32(header + 8);
  if (get_u16(header + 12) != kImageSize || get_u16(header + 14) != kImageSize || header[16] != kImageChannels) {
    throw FormatError(file.string() + ": unsupported image geometry");
  }
}

std::optional<Sample> CorpusReader::next() {
  if (index_ >= count_) return std::nullopt;
  std::uint8_t rec[kRecordBytes];
  in_.read(reinterpret_cast<char*>(rec), sizeof(rec));
  if (in_.gcount() != std::streamsize(sizeof(rec))) {
    throw TruncatedError("corpus truncated at record " + std::to_string(index_) + " of " + std::to_string(count_));
  }
  if (record_crc(rec, rec + kRecordHeaderBytes) != get_u32(rec + 5)) {
    throw ChecksumError("checksum mismatch in record " + std::to_string(index_), std::ptrdiff_t(index_));
  }
  Sample s;
  s.domain = domain_from_code(rec[0]);
  s.task_label = get_u16(rec + 1);
  s.ambiguity = float(get_u16(rec + 3)) / 10000.0f;
  s.pixels.assign(rec + kRecordHeaderBytes, rec + kRecordBytes);
  if (s.task_label >= task_classes(s.domain)) {
    throw FormatError("record " + std::to_string(index_) + ": task label out of range");
  }
  ++index_;
  return s;
}

std::vector<Sample> read_samples(const std::filesystem::path& file) {
  CorpusReader reader(file);
  std::vector<Sample> out;
  out.reserve(reader.size());
  while (auto s = reader.next()) out.push_back(std::move(*s));
  return out;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  DatasetManifest m = corpus.manifest;
  m.files.clear();
  for (auto s : {Split::Train, Split::Val, Split::Test, Split::Ambiguous}) {
    const std::string name = std::string(split_name(s)) + ".mxpd";
    write_samples(out_dir / name, corpus.split(s));
    m.files.push_back(name);
  }
  std::ofstream(out_dir / "manifest.txt") << m.to_text();
}

void write_corpus(const DatasetManifest& manifest, const std::filesystem::path& out_dir) {
  write_corpus(generate_corpus(manifest), out_dir);
}

Corpus read_corpus(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.txt");
  if (!in) throw FormatError("missing manifest in " + dir.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Corpus c;
  c.manifest = DatasetManifest::from_text(text);
  if (c.manifest.generator_version != kGeneratorVersion) {
    throw VersionError("corpus generator version " + std::to_string(c.manifest.generator_version) +
                       ", expected " + std::to_string(kGeneratorVersion));
  }
  c.train = read_samples(dir / "train.mxpd");
  c.val = read_samples(dir / "val.mxpd");
  c.test = read_samples(dir / "test.mxpd");
  c.ambiguous = read_samples(dir / "ambiguous.mxpd");
  return c;
}

std::uint64_t samples_hash(const std::vector<Sample>& samples) {
  // FNV-1a over the serialized record fields.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint8_t byte) {
    h ^= byte;
    h *= 0x100000001b3ULL;
  };
  for (const auto& s : samples) {
    mix(static_cast<std::uint8_t>(s.domain));
    mix(std::uint8_t(s.task_label));
    mix(std::uint8_t(s.task_label >> 8));
    const auto amb = static_cast<std::uint16_t>(std::lround(double(s.ambiguity) * 10000.0));
    mix(std::uint8_t(amb));
    mix(std::uint8_t(amb >> 8));
    for (auto p : s.pixels) mix(p);
  }
  return h;
}

}  // namespace mixpert
