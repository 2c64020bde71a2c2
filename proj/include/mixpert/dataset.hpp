// Copyright 2026 The Mixpert Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Procedural five-domain image corpus.
//
// Every sample is a pure function of (domain, seed). Each domain has its own
// visual style and a small downstream classification task:
//
//   Chart    baseline + vertical bars         bar count (2..6)      5 classes
//   Doc      horizontal text-line stripes     line count (3..7)     5 classes
//   Math     outlined shape + stray strokes   shape type            4 classes
//   Ocr      sparse high-contrast glyphs      glyph count (1..6)    6 classes
//   General  smooth blob field                dominant quadrant     4 classes

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mixpert/tensor.hpp"

namespace mixpert {

enum class DomainLabel : std::uint8_t { Chart = 0, Doc = 1, Math = 2, Ocr = 3, General = 4 };

inline constexpr std::size_t kNumDomains = 5;
inline constexpr std::array<DomainLabel, kNumDomains> kAllDomains = {
    DomainLabel::Chart, DomainLabel::Doc, DomainLabel::Math, DomainLabel::Ocr, DomainLabel::General};

std::string_view domain_name(DomainLabel d);
DomainLabel parse_domain(std::string_view name);
DomainLabel domain_from_code(int code);
inline std::size_t domain_index(DomainLabel d) { return static_cast<std::size_t>(d); }

// Number of downstream task classes for a domain.
std::size_t task_classes(DomainLabel d);

inline constexpr std::size_t kImageSize = 32;
inline constexpr std::size_t kImageChannels = 1;
inline constexpr std::size_t kPixels = kImageSize * kImageSize * kImageChannels;

struct Sample {
  std::vector<std::uint8_t> pixels;  // C*H*W, value = pixel / 255
  DomainLabel domain = DomainLabel::Chart;
  std::uint16_t task_label = 0;
  float ambiguity = 0.0f;  // 0 for pure samples, blend weight otherwise

  float pixel(std::size_t i) const { return float(pixels[i]) / 255.0f; }
  // [C, H, W] float tensor in [0, 1].
  Tensor image() const;

  friend bool operator==(const Sample&, const Sample&) = default;
};

Sample generate(DomainLabel domain, std::uint64_t seed);

// Pixelwise blend (1 - mix) * domain_a + mix * domain_b of two pure renders.
// The sample keeps domain_a and its task label; ambiguity = mix (quantized to
// 1e-4 as stored on disk).
Sample generate_ambiguous(DomainLabel domain_a, DomainLabel domain_b, double mix, std::uint64_t seed);

std::uint8_t quantize_pixel(double value);
float quantize_ambiguity(double mix);

// --- corpus ------------------------------------------------------------------

enum class Split : std::uint8_t { Train = 0, Val = 1, Test = 2, Ambiguous = 3 };
std::string_view split_name(Split s);

inline constexpr std::uint32_t kGeneratorVersion = 1;

struct DatasetManifest {
  std::uint64_t seed = 2024;
  std::size_t train_per_domain = 5000;
  std::size_t val_per_domain = 1000;
  std::size_t test_per_domain = 1000;
  std::size_t ambiguous_count = 1000;
  double ambiguous_mix_lo = 0.35;
  double ambiguous_mix_hi = 0.65;
  // Share of ambiguous samples in the mixed routing evaluation set.
  double ambiguous_fraction = 0.2;
  std::uint32_t generator_version = kGeneratorVersion;
  std::vector<std::string> files;  // filled by write_corpus

  std::size_t count(Split s) const;
  std::string to_text() const;
  static DatasetManifest from_text(std::string_view text);
  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

// Seed of sample `index` of `domain` within `split`. Splits draw from
// disjoint seed streams.
std::uint64_t sample_seed(const DatasetManifest& m, Split split, DomainLabel domain, std::size_t index);

// Domain-major order: all Chart samples, then Doc, ... For Ambiguous the
// domain pair and mix are drawn per index.
std::vector<Sample> generate_split(const DatasetManifest& m, Split split);

struct Corpus {
  DatasetManifest manifest;
  std::vector<Sample> train, val, test, ambiguous;

  const std::vector<Sample>& split(Split s) const;
};

Corpus generate_corpus(const DatasetManifest& m);

// First `n` train samples of every domain (nested as n grows).
std::vector<Sample> nested_train_subset(const std::vector<Sample>& train, std::size_t per_domain);
std::vector<Sample> filter_domain(const std::vector<Sample>& samples, DomainLabel d);

// --- on-disk format ----------------------------------------------------------
//
// Little-endian. Header: "MXPD", u32 version, u32 count, u16 H, u16 W,
// u8 channels. Record: u8 domain, u16 task_label, u16 round(ambiguity*10000),
// u32 CRC32 of the preceding 5 bytes followed by the pixels, then H*W*C u8
// pixels.

inline constexpr std::uint32_t kCorpusVersion = 1;
inline constexpr std::size_t kCorpusHeaderBytes = 17;
inline constexpr std::size_t kRecordHeaderBytes = 9;
inline constexpr std::size_t kRecordBytes = kRecordHeaderBytes + kPixels;

void write_samples(const std::filesystem::path& file, const std::vector<Sample>& samples);

// Sequential reader; throws VersionError, TruncatedError or ChecksumError.
class CorpusReader {
 public:
  explicit CorpusReader(const std::filesystem::path& file);

  std::size_t size() const { return count_; }
  std::optional<Sample> next();

 private:
  std::ifstream in_;
  std::size_t count_ = 0;
  std::size_t index_ = 0;
};

std::vector<Sample> read_samples(const std::filesystem::path& file);

// Writes <split>.mxpd for every split plus manifest.txt.
void write_corpus(const DatasetManifest& manifest, const std::filesystem::path& out_dir);
void write_corpus(const Corpus& corpus, const std::filesystem::path& out_dir);
Corpus read_corpus(const std::filesystem::path& dir);

// Content hash of a sample sequence (used to tag evaluation sets).
std::uint64_t samples_hash(const std::vector<Sample>& samples);

}  // namespace mixpert
