#include "bitsplit/scan.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "bitsplit/errors.hpp"

namespace bitsplit {

ScanRational::ScanRational(std::uint32_t num, std::uint32_t den) {
  if (den == 0) throw std::invalid_argument("scan slope denominator must be positive");
  const std::uint32_t g = std::gcd(num, den);
  p = num / g;
  q = den / g;
  if (p == 0) q = 1;
}

std::string ScanRational::to_string() const {
  return q == 1 ? std::to_string(p) : std::to_string(p) + "/" + std::to_string(q);
}

ScanRational ScanRational::parse(const std::string& text) {
  const auto slash = text.find('/');
  try {
    std::size_t used = 0;
    if (slash == std::string::npos) {
      const unsigned long v = std::stoul(text, &used);
      if (used != text.size()) throw std::invalid_argument(text);
      return ScanRational(static_cast<std::uint32_t>(v), 1);
    }
    const std::string a = text.substr(0, slash);
    const std::string b = text.substr(slash + 1);
    const unsigned long num = std::stoul(a, &used);
    if (used != a.size()) throw std::invalid_argument(text);
    const unsigned long den = std::stoul(b, &used);
    if (used != b.size()) throw std::invalid_argument(text);
    return ScanRational(static_cast<std::uint32_t>(num), static_cast<std::uint32_t>(den));
  } catch (const std::logic_error&) {
    throw std::invalid_argument("scan slope must look like p/q, got '" + text + "'");
  }
}

ScanRational b_from_angle(double phi, std::uint32_t patch_width) {
  if (!(phi > 0.0) || phi > 90.0) {
    throw std::invalid_argument("scan angle must lie in (0, 90] degrees");
  }
  if (patch_width == 0) throw std::invalid_argument("patch width must be positive");
  constexpr double kDeg = std::numbers::pi / 180.0;
  constexpr double kAngleTolerance = 0.005;
  const double slope = phi == 90.0 ? 0.0 : 1.0 / std::tan(phi * kDeg);
  if (slope >= patch_width) return ScanRational(patch_width, 1);

  std::optional<ScanRational> best;
  double best_err = 0.0;
  for (std::uint32_t q = 1; q <= 16; ++q) {
    const auto p = static_cast<std::uint32_t>(std::llround(slope * q));
    const double angle = p == 0 ? 90.0 : std::atan(static_cast<double>(q) / p) / kDeg;
    const double err = std::abs(angle - phi);
    if (!best || err < best_err) {
      best = ScanRational(p, q);
      best_err = err;
    }
  }
  if (best_err > kAngleTolerance) {
    throw Unsupported("angle " + std::to_string(phi) +
                      " does not correspond to a small rational slope; pass b as p/q");
  }
  return *best;
}

std::int64_t ceil_scaled(const ScanRational& b, std::int64_t x) {
  const std::int64_t num = static_cast<std::int64_t>(b.p) * x;
  const std::int64_t den = b.q;
  const std::int64_t quot = num / den;
  return (num % den != 0 && num > 0) ? quot + 1 : quot;
}

std::uint64_t total_steps(const ScanRational& b, std::uint32_t patch_height, std::uint32_t patch_width) {
  if (patch_height == 0 || patch_width == 0) throw std::invalid_argument("patch dimensions must be positive");
  return static_cast<std::uint64_t>(ceil_scaled(b, patch_height - 1)) + patch_width;
}

std::uint32_t period(const ScanRational& b) { return b.q; }

ScanSchedule::ScanSchedule(ScanRational b, std::uint32_t patch_height, std::uint32_t patch_width)
    : b_(b), height_(patch_height), width_(patch_width) {
  const std::uint64_t m = bitsplit::total_steps(b, patch_height, patch_width);
  steps_.resize(std::size_t{height_} * width_);
  wavefronts_.resize(m);
  for (std::uint32_t h = 0; h < height_; ++h) {
    const auto row_start = static_cast<std::uint32_t>(ceil_scaled(b, h));
    for (std::uint32_t w = 0; w < width_; ++w) {
      steps_[std::size_t{h} * width_ + w] = row_start + w;
    }
  }
  // Filling rows in order keeps each wavefront sorted by h.
  for (std::uint32_t h = 0; h < height_; ++h) {
    for (std::uint32_t w = 0; w < width_; ++w) {
      wavefronts_[step_of(h, w)].push_back({h, w});
    }
  }
}

std::string ScanSchedule::dump() const {
  std::ostringstream os;
  os << "schedule b=" << b_.to_string() << " patch=" << height_ << "x" << width_ << " steps=" << total_steps()
     << "\n";
  for (std::size_t s = 0; s < wavefronts_.size(); ++s) {
    os << "step " << s << ":";
    for (const auto& px : wavefronts_[s]) os << " (" << px.h << "," << px.w << ")";
    os << "\n";
  }
  return os.str();
}

ScanSchedule build_schedule(const ScanRational& b, std::uint32_t patch_height, std::uint32_t patch_width) {
  return ScanSchedule(b, patch_height, patch_width);
}

MaskSet::MaskSet(ScanRational b, int kernel) : b_(b), kernel_(kernel), period_(bitsplit::period(b)) {
  if (kernel < 1 || kernel % 2 == 0) throw std::invalid_argument("mask kernel size must be odd and positive");
  const int r = kernel / 2;
  masks_.assign(period_, std::vector<std::uint8_t>(static_cast<std::size_t>(kernel) * kernel, 0));
  // Step difference between (h+dy, w+dx) and (h, w) is ceil(b(h+dy)) - ceil(bh) + dx,
  // which depends on h only through h mod q.
  for (std::uint32_t res = 0; res < period_; ++res) {
    const std::int64_t base = ceil_scaled(b, res);
    for (int dy = -r; dy <= r; ++dy) {
      const std::int64_t shift = ceil_scaled(b, static_cast<std::int64_t>(res) + dy) - base;
      for (int dx = -r; dx <= r; ++dx) {
        if (shift + dx < 0) {
          masks_[res][static_cast<std::size_t>((dy + r) * kernel + dx + r)] = 1;
        }
      }
    }
  }
}

std::size_t MaskSet::distinct_count() const {
  return std::set<std::vector<std::uint8_t>>(masks_.begin(), masks_.end()).size();
}

std::string MaskSet::dump() const {
  std::ostringstream os;
  os << "masks b=" << b_.to_string() << " K=" << kernel_ << " F=" << period_ << " distinct=" << distinct_count()
     << "\n";
  for (std::uint32_t res = 0; res < period_; ++res) {
    os << "residue " << res << ":\n";
    for (int y = 0; y < kernel_; ++y) {
      for (int x = 0; x < kernel_; ++x) {
        const bool centre = y == kernel_ / 2 && x == kernel_ / 2;
        os << (centre ? 'x' : (masks_[res][static_cast<std::size_t>(y * kernel_ + x)] ? '#' : '.'));
      }
      os << "\n";
    }
  }
  return os.str();
}

MaskSet build_masks(const ScanRational& b, int kernel) { return MaskSet(b, kernel); }

CausalityReport verify_causality(const ScanSchedule& schedule, const MaskSet& masks) {
  CausalityReport report;
  const int r = masks.radius();
  const auto H = static_cast<std::int64_t>(schedule.height());
  const auto W = static_cast<std::int64_t>(schedule.width());
  for (std::int64_t h = 0; h < H; ++h) {
    for (std::int64_t w = 0; w < W; ++w) {
      const auto step = schedule.step_of(static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(w));
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          if (!masks.allows(static_cast<std::uint32_t>(h), dy, dx)) continue;
          const std::int64_t nh = h + dy;
          const std::int64_t nw = w + dx;
          if (nh < 0 || nh >= H || nw < 0 || nw >= W) continue;
          ++report.taps_checked;
          const auto nstep = schedule.step_of(static_cast<std::uint32_t>(nh), static_cast<std::uint32_t>(nw));
          if (nstep >= step && !report.first_violation) {
            report.first_violation = CausalityViolation{
                {static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(w)}, dy, dx, step, nstep};
          }
        }
      }
    }
  }
  return report;
}

}  // namespace bitsplit
