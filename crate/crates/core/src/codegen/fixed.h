// SPDX-License-Identifier: Apache-2.0
// Minimal bit-accurate fixed-point arithmetic for generated models.
// A value is a raw two's-complement integer; its real value is
// raw * 2^-frac. Products and sums are exact in 128 bits and every cast
// goes through requantize().
#ifndef FF_FIXED_H
#define FF_FIXED_H

namespace ff {

typedef __int128 i128;
typedef unsigned __int128 u128;
typedef long long i64;

struct Spec {
    int width;
    int frac;
    bool is_signed;
    bool round_half_up;
    bool saturate;
};

struct CooEntry {
    unsigned long long index;
    i64 raw;
};

constexpr i128 make_i128(i64 hi, unsigned long long lo) {
    return (i128)(((u128)(unsigned long long)hi << 64) | (u128)lo);
}

inline i128 min_raw(const Spec& s) {
    return s.is_signed ? -((i128)1 << (s.width - 1)) : 0;
}

inline i128 max_raw(const Spec& s) {
    return s.is_signed ? ((i128)1 << (s.width - 1)) - 1 : ((i128)1 << s.width) - 1;
}

inline i64 wrap_low_bits(u128 low, const Spec& s) {
    u128 mask = (((u128)1) << s.width) - 1;
    u128 bits = low & mask;
    if (s.is_signed && ((bits >> (s.width - 1)) & 1)) {
        return (i64)((i128)bits - ((i128)1 << s.width));
    }
    return (i64)bits;
}

inline i64 fit(i128 v, const Spec& s) {
    if (v >= min_raw(s) && v <= max_raw(s)) return (i64)v;
    if (s.saturate) return (i64)(v < 0 ? min_raw(s) : max_raw(s));
    return wrap_low_bits((u128)v, s);
}

inline int bit_length(u128 v) {
    int n = 0;
    while (v) {
        v >>= 1;
        ++n;
    }
    return n;
}

inline i64 shift_left_fit(i128 mant, long long shift, const Spec& s) {
    if (mant == 0) return 0;
    u128 mag = mant < 0 ? (u128)(-(mant + 1)) + 1 : (u128)mant;
    if (bit_length(mag) + shift <= 126) return fit((i128)((u128)mant << shift), s);
    if (s.saturate) return (i64)(mant < 0 ? min_raw(s) : max_raw(s));
    u128 low = shift >= 128 ? 0 : ((u128)mant << shift);
    return wrap_low_bits(low, s);
}

inline i128 shift_right_round(i128 mant, long long shift, bool round_half_up) {
    if (!round_half_up) {
        if (shift >= 127) return mant < 0 ? -1 : 0;
        return mant >> shift;
    }
    if (shift >= 128) return 0;
    i128 q = mant >> (shift - 1);
    i128 top = (i128)(((u128)1 << 127) - 1);
    if (q != top) q += 1;
    return q >> 1;
}

// Rounds and fits mant * 2^-frac into s.
inline i64 requantize(i128 mant, int frac, const Spec& s) {
    long long shift = (long long)s.frac - (long long)frac;
    if (shift >= 0) return shift_left_fit(mant, shift, s);
    return fit(shift_right_round(mant, -shift, s.round_half_up), s);
}

// y = cast_res(fit(...fit(cast_acc(b) + cast_acc(w * x))...)), skipping
// zero weights, products in ascending input index.
inline void dense(const i64* x, const Spec& xs, const i64* w, const Spec& ws, const i64* b,
                  const Spec& bs, const Spec& acc, const Spec& res, int n_in, int n_out, i64* y) {
    for (int o = 0; o < n_out; ++o) {
        i64 a = requantize(b[o], bs.frac, acc);
        for (int i = 0; i < n_in; ++i) {
            i64 wv = w[o * n_in + i];
            if (wv == 0) continue;
            i64 p = requantize((i128)wv * (i128)x[i], ws.frac + xs.frac, acc);
            a = fit((i128)a + (i128)p, acc);
        }
        y[o] = requantize(a, acc.frac, res);
    }
}

// Same arithmetic as dense() over nonzero entries sorted by packed index
// out * n_in + in.
inline void dense_coo(const i64* x, const Spec& xs, const CooEntry* e, int n_entries, const Spec& ws,
                      const i64* b, const Spec& bs, const Spec& acc, const Spec& res, int n_in,
                      int n_out, i64* y) {
    int k = 0;
    for (int o = 0; o < n_out; ++o) {
        i64 a = requantize(b[o], bs.frac, acc);
        while (k < n_entries && (int)(e[k].index / (unsigned long long)n_in) == o) {
            int i = (int)(e[k].index % (unsigned long long)n_in);
            i64 p = requantize((i128)e[k].raw * (i128)x[i], ws.frac + xs.frac, acc);
            a = fit((i128)a + (i128)p, acc);
            ++k;
        }
        y[o] = requantize(a, acc.frac, res);
    }
}

// Per-channel scale * x + shift (folded batch norm).
inline void scale(const i64* x, const Spec& xs, const i64* sc, const Spec& ss, const i64* sh,
                  const Spec& hs, const Spec& acc, const Spec& res, int n, i64* y) {
    for (int c = 0; c < n; ++c) {
        i64 a = requantize(sh[c], hs.frac, acc);
        i64 p = requantize((i128)sc[c] * (i128)x[c], ss.frac + xs.frac, acc);
        a = fit((i128)a + (i128)p, acc);
        y[c] = requantize(a, acc.frac, res);
    }
}

inline void relu(const i64* x, const Spec& xs, const Spec& res, int n, i64* y) {
    for (int c = 0; c < n; ++c) y[c] = x[c] > 0 ? requantize(x[c], xs.frac, res) : 0;
}

// +1 when x >= 0, else -1, as raw values of the result format.
inline void binary_tanh(const i64* x, i64 plus, i64 minus, int n, i64* y) {
    for (int c = 0; c < n; ++c) y[c] = x[c] >= 0 ? plus : minus;
}

// +1 when raw > hi, -1 when raw <= lo, else 0.
inline void ternary_tanh(const i64* x, i128 hi, i128 lo, i64 plus, i64 minus, int n, i64* y) {
    for (int c = 0; c < n; ++c) {
        if ((i128)x[c] > hi) {
            y[c] = plus;
        } else if ((i128)x[c] <= lo) {
            y[c] = minus;
        } else {
            y[c] = 0;
        }
    }
}

// mode 1: +1 iff raw >= bound; -1: +1 iff raw <= bound; 2 / -2: constant.
inline void threshold(const i64* x, const i128* bound, const int* mode, i64 plus, i64 minus, int n,
                      i64* y) {
    for (int c = 0; c < n; ++c) {
        bool up;
        switch (mode[c]) {
            case 1: up = (i128)x[c] >= bound[c]; break;
            case -1: up = (i128)x[c] <= bound[c]; break;
            default: up = mode[c] > 0; break;
        }
        y[c] = up ? plus : minus;
    }
}

}  // namespace ff

#endif
