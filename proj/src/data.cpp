#include "ebmm/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ebmm/errors.hpp"
#include "ebmm/rng.hpp"

namespace ebmm {

namespace {

constexpr double kTau = 6.283185307179586476925286766559;

// 8x8 glyphs for digits 0..9, one byte per row, MSB = leftmost pixel.
constexpr unsigned char kGlyphs[10][8] = {
    {0x3C, 0x66, 0x6E, 0x76, 0x66, 0x66, 0x3C, 0x00},  // 0
    {0x18, 0x38, 0x18, 0x18, 0x18, 0x18, 0x7E, 0x00},  // 1
    {0x3C, 0x66, 0x06, 0x0C, 0x30, 0x60, 0x7E, 0x00},  // 2
    {0x3C, 0x66, 0x06, 0x1C, 0x06, 0x66, 0x3C, 0x00},  // 3
    {0x0C, 0x1C, 0x3C, 0x6C, 0x7E, 0x0C, 0x0C, 0x00},  // 4
    {0x7E, 0x60, 0x7C, 0x06, 0x06, 0x66, 0x3C, 0x00},  // 5
    {0x3C, 0x60, 0x60, 0x7C, 0x66, 0x66, 0x3C, 0x00},  // 6
    {0x7E, 0x06, 0x0C, 0x18, 0x30, 0x30, 0x30, 0x00},  // 7
    {0x3C, 0x66, 0x66, 0x3C, 0x66, 0x66, 0x3C, 0x00},  // 8
    {0x3C, 0x66, 0x66, 0x3E, 0x06, 0x06, 0x3C, 0x00},  // 9
};

void validate_common(const DatasetSpec& spec) {
  if (spec.classes < 2) throw ConfigError("dataset.classes must be >= 2");
  if (spec.modalities != 2)
    throw ConfigError("both dataset families define exactly 2 modalities");
  if (spec.noise < 0.0) throw ConfigError("dataset.noise must be >= 0");
  const int floor_n = spec.classes * 10;
  if (spec.n_train < floor_n || spec.n_test < floor_n)
    throw ConfigError("dataset sizes must be >= 10 * classes");
}

Dataset gmm_split(const DatasetSpec& spec, int n, RngStream rng) {
  const int K = spec.classes;
  Dataset ds;
  ds.modalities = 2;
  ds.classes = K;
  ds.dims = {2, 2};
  ds.labels.reserve(n);
  ds.views.assign(2, {});
  ds.views[0].reserve(static_cast<std::size_t>(n) * 2);
  ds.views[1].reserve(static_cast<std::size_t>(n) * 2);

  for (int r = 0; r < n; ++r) {
    const int k = rng.uniform_int(K);
    ds.labels.push_back(k);
    // Modality A: centers at angle 2*pi*k/K. Modality B: class indices
    // cycled one step and the circle rotated half a sector, so neither the
    // geometry nor the class mapping is shared between views.
    const double ang_a = kTau * k / K;
    const int kb = (k + 1) % K;
    const double ang_b = kTau * kb / K + kTau / (2.0 * K);
    const double ax = spec.radius * std::cos(ang_a) + spec.noise * rng.normal();
    const double ay = spec.radius * std::sin(ang_a) + spec.noise * rng.normal();
    const double bx = spec.radius * std::cos(ang_b) + spec.noise * rng.normal();
    const double by = spec.radius * std::sin(ang_b) + spec.noise * rng.normal();
    ds.views[0].push_back(quantize9(ax));
    ds.views[0].push_back(quantize9(ay));
    ds.views[1].push_back(quantize9(bx));
    ds.views[1].push_back(quantize9(by));
  }
  return ds;
}

Dataset bitmap_split(const DatasetSpec& spec, int n, RngStream rng) {
  const int K = spec.classes;
  Dataset ds;
  ds.modalities = 2;
  ds.classes = K;
  ds.dims = {64, 64};
  ds.labels.reserve(n);
  ds.views.assign(2, {});
  ds.views[0].reserve(static_cast<std::size_t>(n) * 64);
  ds.views[1].reserve(static_cast<std::size_t>(n) * 64);

  auto clamp01 = [](double v) { return std::min(1.0, std::max(0.0, v)); };

  for (int r = 0; r < n; ++r) {
    const int k = rng.uniform_int(K);
    ds.labels.push_back(k);
    for (int view = 0; view < 2; ++view) {
      for (int p = 0; p < 64; ++p) {
        const bool on = (kGlyphs[k][p / 8] >> (7 - p % 8)) & 1;
        double v;
        if (view == 0)
          v = on ? 1.0 : spec.background_a;
        else
          v = on ? spec.background_b : 1.0;
        v += spec.noise * rng.normal();
        ds.views[view].push_back(quantize9(clamp01(v)));
      }
    }
  }
  return ds;
}

}  // namespace

double quantize9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return std::strtod(buf, nullptr);
}

std::pair<Dataset, Dataset> generate_gmm_pair(const DatasetSpec& spec) {
  validate_common(spec);
  if (spec.radius <= 0.0) throw ConfigError("dataset.radius must be positive");
  RngStream root(spec.seed);
  return {gmm_split(spec, spec.n_train, root.substream(1)),
          gmm_split(spec, spec.n_test, root.substream(2))};
}

std::pair<Dataset, Dataset> generate_bitmap_digits(const DatasetSpec& spec) {
  validate_common(spec);
  if (spec.classes > 10)
    throw ConfigError("bitmap_digits supports at most 10 classes");
  if (spec.background_a < 0.0 || spec.background_a > 1.0 ||
      spec.background_b < 0.0 || spec.background_b > 1.0)
    throw ConfigError("bitmap background levels must lie in [0, 1]");
  RngStream root(spec.seed);
  return {bitmap_split(spec, spec.n_train, root.substream(1)),
          bitmap_split(spec, spec.n_test, root.substream(2))};
}

std::pair<Dataset, Dataset> generate_dataset(const DatasetSpec& spec) {
  switch (spec.family) {
    case DatasetFamily::GmmPair:
      return generate_gmm_pair(spec);
    case DatasetFamily::BitmapDigits:
      return generate_bitmap_digits(spec);
  }
  throw ConfigError("unknown dataset family");
}

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ostringstream out;
  out << "MMDS1 m=" << ds.modalities << " K=" << ds.classes
      << " n=" << ds.size() << " dims=";
  for (int i = 0; i < ds.modalities; ++i) {
    if (i) out << ',';
    out << ds.dims[i];
  }
  out << '\n';
  char buf[40];
  for (int r = 0; r < ds.size(); ++r) {
    out << ds.labels[r];
    for (int i = 0; i < ds.modalities; ++i) {
      out << ',';
      const double* row = ds.views[i].data() +
                          static_cast<std::size_t>(r) * ds.dims[i];
      for (int c = 0; c < ds.dims[i]; ++c) {
        if (c) out << ';';
        std::snprintf(buf, sizeof(buf), "%.9g", row[c]);
        out << buf;
      }
    }
    out << '\n';
  }

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp);
    const std::string body = out.str();
    f.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!f) throw IoError("short write to " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + " to " + path);
}

namespace {

struct Cursor {
  const char* base;
  const char* p;
  const char* end;

  std::size_t off() const { return static_cast<std::size_t>(p - base); }
  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError(msg, off());
  }
  void literal(const char* lit) {
    const std::size_t len = std::strlen(lit);
    if (static_cast<std::size_t>(end - p) < len ||
        std::memcmp(p, lit, len) != 0)
      fail(std::string("expected '") + lit + "'");
    p += len;
  }
  long integer() {
    char* after = nullptr;
    const long v = std::strtol(p, &after, 10);
    if (after == p) fail("expected an integer");
    p = after;
    return v;
  }
  double real() {
    char* after = nullptr;
    const double v = std::strtod(p, &after);
    if (after == p) fail("expected a number");
    if (!std::isfinite(v)) fail("non-finite value");
    p = after;
    return v;
  }
  void newline() {
    if (p < end && *p == '\n') {
      ++p;
      return;
    }
    fail("expected end of line");
  }
};

}  // namespace

Dataset load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());
  text.push_back('\0');  // strto* need a terminator; not part of the data
  Cursor cur{text.data(), text.data(), text.data() + text.size() - 1};

  Dataset ds;
  cur.literal("MMDS1 m=");
  ds.modalities = static_cast<int>(cur.integer());
  if (ds.modalities < 1) cur.fail("modality count must be positive");
  cur.literal(" K=");
  ds.classes = static_cast<int>(cur.integer());
  if (ds.classes < 1) cur.fail("class count must be positive");
  cur.literal(" n=");
  const long n = cur.integer();
  if (n < 0) cur.fail("example count must be >= 0");
  cur.literal(" dims=");
  for (int i = 0; i < ds.modalities; ++i) {
    if (i) cur.literal(",");
    const long d = cur.integer();
    if (d < 1) cur.fail("view extent must be positive");
    ds.dims.push_back(static_cast<int>(d));
  }
  cur.newline();

  ds.views.assign(ds.modalities, {});
  for (int i = 0; i < ds.modalities; ++i)
    ds.views[i].reserve(static_cast<std::size_t>(n) * ds.dims[i]);
  ds.labels.reserve(n);

  for (long r = 0; r < n; ++r) {
    const std::size_t label_off = cur.off();
    const long label = cur.integer();
    if (label < 0 || label >= ds.classes)
      throw ParseError("label out of range", label_off);
    ds.labels.push_back(static_cast<int>(label));
    for (int i = 0; i < ds.modalities; ++i) {
      cur.literal(",");
      for (int c = 0; c < ds.dims[i]; ++c) {
        if (c) cur.literal(";");
        ds.views[i].push_back(cur.real());
      }
    }
    // The final line may end at EOF instead of a newline.
    if (r == n - 1 && cur.p == cur.end) break;
    cur.newline();
  }
  if (cur.p != cur.end) cur.fail("trailing content after the last example");
  return ds;
}

Batch make_batch(const Dataset& ds, const std::vector<int>& indices) {
  Batch batch;
  const int b = static_cast<int>(indices.size());
  if (b == 0) throw ContractError("batch needs at least one example");
  batch.labels.reserve(b);
  for (int idx : indices) {
    if (idx < 0 || idx >= ds.size())
      throw ContractError("batch index out of range");
    batch.labels.push_back(ds.labels[idx]);
  }
  for (int i = 0; i < ds.modalities; ++i) {
    Tensor view({b, ds.dims[i]});
    for (int r = 0; r < b; ++r) {
      const double* src = ds.views[i].data() +
                          static_cast<std::size_t>(indices[r]) * ds.dims[i];
      std::copy(src, src + ds.dims[i],
                view.data() + static_cast<std::size_t>(r) * ds.dims[i]);
    }
    batch.views.push_back(view);
  }
  return batch;
}

Batch full_batch(const Dataset& ds) {
  std::vector<int> idx(ds.size());
  for (int r = 0; r < ds.size(); ++r) idx[r] = r;
  return make_batch(ds, idx);
}

}  // namespace ebmm
