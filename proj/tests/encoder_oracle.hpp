#pragma once

// Straightforward double-precision re-implementations of the encoder forward
// passes. They share no code with the library and double as the function that
// finite differences are taken of.

#include <cmath>
#include <vector>

#include "bap/encoders.hpp"

namespace bap::testing {

using Vec = std::vector<double>;

inline Vec to_vec(const Tensor& t) { return Vec(t.data().begin(), t.data().end()); }

struct OracleParams {
  std::vector<Vec> values;  // same order as EncoderModel::params()
  std::vector<Shape> shapes;
};

inline OracleParams oracle_params(const EncoderModel& m) {
  OracleParams p;
  for (const Parameter& q : m.params()) {
    p.values.push_back(to_vec(q.value));
    p.shapes.push_back(q.value.shape());
  }
  return p;
}

// y = W x for W [out x in] stored row-major.
inline Vec dense(const Vec& w, const Vec& x, std::size_t out, std::size_t in) {
  Vec y(out, 0.0);
  for (std::size_t o = 0; o < out; ++o) {
    for (std::size_t i = 0; i < in; ++i) {
      y[o] += w[o * in + i] * x[i];
    }
  }
  return y;
}

inline double gelu_exact(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

// One image, HWC, 3x3 kernel, stride 2, pad 1.
inline Vec conv_s2(const Vec& x, std::size_t h, std::size_t w, std::size_t cin, const Vec& k,
                   const Vec& b, std::size_t cout, std::size_t& oh, std::size_t& ow) {
  oh = (h + 2 - 3) / 2 + 1;
  ow = (w + 2 - 3) / 2 + 1;
  Vec y(oh * ow * cout, 0.0);
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      for (std::size_t co = 0; co < cout; ++co) {
        double s = b[co];
        for (std::size_t ky = 0; ky < 3; ++ky) {
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const long iy = long(oy * 2 + ky) - 1;
            const long ix = long(ox * 2 + kx) - 1;
            if (iy < 0 || ix < 0 || iy >= long(h) || ix >= long(w)) {
              continue;
            }
            for (std::size_t ci = 0; ci < cin; ++ci) {
              s += k[co * 9 * cin + (ky * 3 + kx) * cin + ci] * x[(std::size_t(iy) * w + std::size_t(ix)) * cin + ci];
            }
          }
        }
        y[(oy * ow + ox) * cout + co] = s;
      }
    }
  }
  return y;
}

// Unit-norm embedding of one HWC image.
inline Vec oracle_embed(const EncoderModel& m, const OracleParams& p, const Vec& x) {
  const ImageShape& s = m.image();
  const std::size_t d = m.dim();
  Vec z;
  switch (m.arch()) {
    case Arch::PlantedLinear:
    case Arch::Linear: {
      z = dense(p.values[0], x, d, s.flat());
      if (m.alpha() > 0.0) {
        const std::size_t ph = s.height / 4, pw = s.width / 4;
        Vec phi(ph * pw * s.channels, 0.0);
        for (std::size_t y = 0; y < s.height; ++y) {
          for (std::size_t xx = 0; xx < s.width; ++xx) {
            for (std::size_t c = 0; c < s.channels; ++c) {
              phi[((y / 4) * pw + xx / 4) * s.channels + c] += x[(y * s.width + xx) * s.channels + c] / 16.0;
            }
          }
        }
        for (double& v : phi) {
          v = v * v;
        }
        const Vec extra = dense(p.values[1], phi, d, phi.size());
        for (std::size_t i = 0; i < d; ++i) {
          z[i] += m.alpha() * extra[i];
        }
      }
      break;
    }
    case Arch::Mlp: {
      const std::size_t hidden = p.shapes[0][0];
      Vec h = dense(p.values[0], x, hidden, s.flat());
      for (std::size_t i = 0; i < hidden; ++i) {
        h[i] = gelu_exact(h[i] + p.values[1][i]);
      }
      z = dense(p.values[2], h, d, hidden);
      for (std::size_t i = 0; i < d; ++i) {
        z[i] += p.values[3][i];
      }
      break;
    }
    case Arch::Cnn: {
      Vec h = x;
      std::size_t hh = s.height, ww = s.width, c = s.channels;
      for (int layer = 0; layer < 3; ++layer) {
        const std::size_t cout = p.shapes[2 * layer][0];
        std::size_t oh = 0, ow = 0;
        h = conv_s2(h, hh, ww, c, p.values[2 * layer], p.values[2 * layer + 1], cout, oh, ow);
        for (double& v : h) {
          v = gelu_exact(v);
        }
        hh = oh;
        ww = ow;
        c = cout;
      }
      z = dense(p.values[6], h, d, h.size());
      for (std::size_t i = 0; i < d; ++i) {
        z[i] += p.values[7][i];
      }
      break;
    }
  }
  double n = 0.0;
  for (double v : z) {
    n += v * v;
  }
  n = std::sqrt(n);
  for (double& v : z) {
    v /= n;
  }
  return z;
}

}  // namespace bap::testing
