#include "uniptms/encoders.hpp"

#include <cmath>
#include <cstring>

namespace uniptms {

int aa_index(char c) {
    static const int lut[26] = {
        // A  B   C  D  E  F  G  H  I  J   K   L   M  N  O   P  Q  R  S  T
        0, -2, 4, 3, 6, 13, 7, 8, 9, -2, 11, 10, 12, 2, -2, 14, 5, 1, 15, 16,
        // U  V   W   X   Y   Z
        -2, 19, 17, -1, 18, -2};
    if (c < 'A' || c > 'Z') return -2;
    return lut[c - 'A'];
}

bool is_window_char(char c) { return aa_index(c) >= -1; }

void validate_window(const std::string& window, int expected_len, char center) {
    if (expected_len > 0 &&
        static_cast<int>(window.size()) != expected_len)
        throw InputError("window length " + std::to_string(window.size()) +
                         " does not match configured length " +
                         std::to_string(expected_len));
    for (size_t i = 0; i < window.size(); ++i) {
        if (aa_index(window[i]) == -2)
            throw InputError(std::string("invalid residue '") + window[i] +
                             "' at position " + std::to_string(i + 1));
    }
    if (center != 0) {
        char c = window[window.size() / 2];
        if (c != center)
            throw InputError(std::string("center residue '") + c +
                             "' does not match expected '" + center + "'");
    }
}

const std::array<std::array<int, 20>, 20>& blosum62_matrix() {
    // Standard BLOSUM62, rows/cols in ARNDCQEGHILKMFPSTWYV order.
    static const std::array<std::array<int, 20>, 20> m = {{
        {4, -1, -2, -2, 0, -1, -1, 0, -2, -1, -1, -1, -1, -2, -1, 1, 0, -3, -2, 0},
        {-1, 5, 0, -2, -3, 1, 0, -2, 0, -3, -2, 2, -1, -3, -2, -1, -1, -3, -2, -3},
        {-2, 0, 6, 1, -3, 0, 0, 0, 1, -3, -3, 0, -2, -3, -2, 1, 0, -4, -2, -3},
        {-2, -2, 1, 6, -3, 0, 2, -1, -1, -3, -4, -1, -3, -3, -1, 0, -1, -4, -3, -3},
        {0, -3, -3, -3, 9, -3, -4, -3, -3, -1, -1, -3, -1, -2, -3, -1, -1, -2, -2, -1},
        {-1, 1, 0, 0, -3, 5, 2, -2, 0, -3, -2, 1, 0, -3, -1, 0, -1, -2, -1, -2},
        {-1, 0, 0, 2, -4, 2, 5, -2, 0, -3, -3, 1, -2, -3, -1, 0, -1, -3, -2, -2},
        {0, -2, 0, -1, -3, -2, -2, 6, -2, -4, -4, -2, -3, -3, -2, 0, -2, -2, -3, -3},
        {-2, 0, 1, -1, -3, 0, 0, -2, 8, -3, -3, -1, -2, -1, -2, -1, -2, -2, 2, -3},
        {-1, -3, -3, -3, -1, -3, -3, -4, -3, 4, 2, -3, 1, 0, -3, -2, -1, -3, -1, 3},
        {-1, -2, -3, -4, -1, -2, -3, -4, -3, 2, 4, -2, 2, 0, -3, -2, -1, -2, -1, 1},
        {-1, 2, 0, -1, -3, 1, 1, -2, -1, -3, -2, 5, -1, -3, -1, 0, -1, -3, -2, -2},
        {-1, -1, -2, -3, -1, 0, -2, -3, -2, 1, 2, -1, 5, 0, -2, -1, -1, -1, -1, 1},
        {-2, -3, -3, -3, -2, -3, -3, -3, -1, 0, 0, -3, 0, 6, -4, -2, -2, 1, 3, -1},
        {-1, -2, -2, -1, -3, -1, -1, -2, -2, -3, -3, -1, -2, -4, 7, -1, -1, -4, -3, -2},
        {1, -1, 1, 0, -1, 0, 0, 0, -1, -2, -2, 0, -1, -2, -1, 4, 1, -3, -2, -2},
        {0, -1, 0, -1, -1, -1, -1, -2, -2, -1, -1, -1, -1, -2, -1, 1, 5, -2, -2, 0},
        {-3, -3, -4, -4, -2, -2, -3, -2, -2, -3, -2, -3, -1, 1, -4, -3, -2, 11, 2, -3},
        {-2, -2, -2, -3, -2, -1, -2, -3, 2, -1, -1, -2, -1, 3, -3, -2, -2, 2, 7, -2},
        {0, -3, -3, -3, -1, -2, -2, -3, -3, 3, 1, -2, 1, -1, -2, -2, 0, -3, -2, 4},
    }};
    return m;
}

Tensor encode_blosum62(const std::string& window) {
    validate_window(window);
    const auto& m = blosum62_matrix();
    int L = static_cast<int>(window.size());
    std::vector<double> out(static_cast<size_t>(L) * 20, 0.0);
    for (int i = 0; i < L; ++i) {
        int a = aa_index(window[i]);
        if (a < 0) continue;  // 'X' pad row stays zero
        for (int j = 0; j < 20; ++j) out[i * 20 + j] = m[a][j];
    }
    return Tensor::from(Shape::of(L, 20), std::move(out));
}

namespace {

std::vector<AaIndexEntry> build_aaindex_table() {
    // kAminoAcids order: A R N D C Q E G H I L K M F P S T W Y V
    std::vector<AaIndexEntry> t;
    auto put = [&](const char* id, const char* desc,
                   std::array<double, 20> v) { t.push_back({id, desc, v}); };
    put("KYTJ820101", "Kyte-Doolittle hydropathy",
        {1.8, -4.5, -3.5, -3.5, 2.5, -3.5, -3.5, -0.4, -3.2, 4.5, 3.8, -3.9,
         1.9, 2.8, -1.6, -0.8, -0.7, -0.9, -1.3, 4.2});
    put("HOPT810101", "Hopp-Woods hydrophilicity",
        {-0.5, 3.0, 0.2, 3.0, -1.0, 0.2, 3.0, 0.0, -0.5, -1.8, -1.8, 3.0,
         -1.3, -2.5, 0.0, 0.3, -0.4, -3.4, -2.3, -1.5});
    put("FASG760101", "residue molecular weight",
        {89.09, 174.20, 132.12, 133.10, 121.15, 146.15, 147.13, 75.07, 155.16,
         131.17, 131.17, 146.19, 149.21, 165.19, 115.13, 105.09, 119.12,
         204.24, 181.19, 117.15});
    put("SIDECHAIN_MASS", "side-chain mass",
        {15.0, 101.0, 58.0, 59.0, 47.0, 72.0, 73.0, 1.0, 82.0, 57.0, 57.0,
         73.0, 75.0, 91.0, 42.0, 31.0, 45.0, 130.0, 107.0, 43.0});
    put("GRAR740102", "Grantham polarity",
        {8.1, 10.5, 11.6, 13.0, 5.5, 10.5, 12.3, 9.0, 10.4, 5.2, 4.9, 11.3,
         5.7, 5.2, 8.0, 9.2, 8.6, 5.4, 6.2, 5.9});
    put("ZIMJ680104", "isoelectric point",
        {6.00, 10.76, 5.41, 2.77, 5.05, 5.65, 3.22, 5.97, 7.59, 6.02, 5.98,
         9.74, 5.74, 5.48, 6.30, 5.68, 5.66, 5.89, 5.66, 5.96});
    put("CHOC750101", "residue volume (Chothia)",
        {88.6, 173.4, 114.1, 111.1, 108.5, 143.8, 138.4, 60.1, 153.2, 166.7,
         166.7, 168.6, 162.9, 189.9, 112.7, 89.0, 116.1, 227.8, 193.6, 140.0});
    put("BHAR880101", "average flexibility",
        {0.357, 0.529, 0.463, 0.511, 0.346, 0.493, 0.497, 0.544, 0.323, 0.462,
         0.365, 0.466, 0.295, 0.314, 0.509, 0.507, 0.444, 0.305, 0.420,
         0.386});
    put("ZIMJ680102", "bulkiness",
        {11.50, 14.28, 12.82, 11.68, 13.46, 14.45, 13.57, 3.40, 13.69, 21.40,
         21.40, 15.71, 16.25, 19.80, 17.43, 9.47, 15.77, 21.67, 18.03, 21.57});
    put("CHOP780201", "alpha-helix propensity (Chou-Fasman)",
        {1.42, 0.98, 0.67, 1.01, 0.70, 1.11, 1.51, 0.57, 1.00, 1.08, 1.21,
         1.16, 1.45, 1.13, 0.57, 0.77, 0.83, 1.08, 0.69, 1.06});
    put("CHOP780202", "beta-sheet propensity (Chou-Fasman)",
        {0.83, 0.93, 0.89, 0.54, 1.19, 1.10, 0.37, 0.75, 0.87, 1.60, 1.30,
         0.74, 1.05, 1.38, 0.55, 0.75, 1.19, 1.37, 1.47, 1.70});
    put("CHOP780203", "reverse-turn propensity (Chou-Fasman)",
        {0.66, 0.95, 1.56, 1.46, 1.19, 0.98, 0.74, 1.56, 0.95, 0.47, 0.59,
         1.01, 0.60, 0.60, 1.52, 1.43, 0.96, 0.96, 1.14, 0.50});
    put("EISD840101", "Eisenberg consensus hydrophobicity",
        {0.62, -2.53, -0.78, -0.90, 0.29, -0.85, -0.74, 0.48, -0.40, 1.38,
         1.06, -1.50, 0.64, 1.19, 0.12, -0.18, -0.05, 0.81, 0.26, 1.08});
    put("FAUJ880103", "normalized van der Waals volume",
        {1.00, 6.13, 2.95, 2.78, 2.43, 3.95, 3.78, 0.00, 4.66, 4.00, 4.00,
         4.77, 4.43, 5.89, 2.72, 1.60, 2.60, 8.08, 6.47, 3.00});
    put("CHAM820101", "polarizability",
        {0.046, 0.291, 0.134, 0.105, 0.128, 0.180, 0.151, 0.000, 0.230, 0.186,
         0.186, 0.219, 0.221, 0.290, 0.131, 0.062, 0.108, 0.409, 0.298,
         0.140});
    put("JANJ780101", "Janin transfer free energy",
        {0.3, -1.4, -0.5, -0.6, 0.9, -0.7, -0.7, 0.3, -0.1, 0.7, 0.5, -1.8,
         0.4, 0.5, -0.3, -0.1, -0.2, 0.3, -0.4, 0.6});
    put("NET_CHARGE", "net charge at pH 7",
        {0, 1, 0, -1, 0, 0, -1, 0, 0.1, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0});
    put("HEAVY_ATOMS", "side-chain heavy atom count",
        {1, 7, 4, 4, 2, 5, 5, 0, 6, 4, 4, 5, 4, 7, 3, 2, 3, 10, 8, 3});
    put("AROMATIC", "aromatic indicator",
        {0, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 1, 1, 0});
    put("ALIPHATIC", "aliphatic indicator",
        {1, 0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 1});
    put("HBOND_DONOR", "side-chain H-bond donor count",
        {0, 4, 2, 0, 1, 2, 0, 0, 1, 0, 0, 3, 0, 0, 0, 1, 1, 1, 1, 0});
    put("SIDECHAIN_PKA", "side-chain pKa (0 if non-ionizable)",
        {0, 12.48, 0, 3.65, 8.30, 0, 4.25, 0, 6.00, 0, 0, 10.53, 0, 0, 0, 0,
         0, 0, 10.07, 0});
    put("MCMJ800101", "refractivity",
        {4.34, 26.66, 13.28, 12.00, 35.77, 17.56, 17.26, 0.00, 21.81, 19.06,
         18.78, 21.29, 21.64, 29.40, 10.93, 6.35, 11.01, 42.53, 31.53, 13.92});
    put("CHOC760101", "accessible surface area (tripeptide)",
        {115, 225, 160, 150, 135, 180, 190, 75, 195, 175, 170, 200, 185, 210,
         145, 115, 140, 255, 230, 155});
    put("DAYM780201", "relative mutability",
        {100, 65, 134, 106, 20, 93, 102, 49, 66, 96, 40, 56, 94, 41, 56, 120,
         97, 18, 41, 74});
    put("FAPY880101", "octanol transfer free energy (Fauchere-Pliska)",
        {0.31, -1.01, -0.60, -0.77, 1.54, -0.22, -0.64, 0.00, 0.13, 1.80,
         1.70, -0.99, 1.23, 1.79, 0.72, -0.04, 0.26, 2.25, 0.96, 1.22});
    put("CHAM810101", "steric parameter (Charton)",
        {0.52, 0.68, 0.76, 0.76, 0.62, 0.68, 0.68, 0.00, 0.70, 1.02, 0.98,
         0.68, 0.78, 0.70, 0.36, 0.53, 0.70, 0.70, 0.70, 0.76});
    put("BETA_BRANCHED", "beta-branched indicator",
        {0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 1});
    put("SMALL_RESIDUE", "small residue indicator (Taylor)",
        {1, 0, 0, 0, 1, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 1, 1, 0, 0, 0});
    put("PROLINE_FLAG", "backbone rigidity (proline) indicator",
        {0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0});
    put("TOP_IDP", "disorder propensity (TOP-IDP)",
        {0.060, 0.180, 0.007, 0.192, 0.020, 0.318, 0.736, 0.166, 0.303,
         -0.486, -0.326, 0.586, -0.397, -0.697, 0.987, 0.341, 0.059, -0.884,
         -0.510, -0.121});
    return t;
}

}  // namespace

const std::vector<AaIndexEntry>& aaindex_table() {
    static const std::vector<AaIndexEntry> t = build_aaindex_table();
    return t;
}

std::vector<std::string> default_aaindex_ids() {
    std::vector<std::string> ids;
    for (const auto& e : aaindex_table()) ids.push_back(e.id);
    return ids;
}

const AaIndexEntry& aaindex_entry(const std::string& id) {
    for (const auto& e : aaindex_table())
        if (e.id == id) return e;
    throw ConfigError("unknown AAIndex id '" + id + "'");
}

namespace {

std::array<double, 20> znorm(const std::array<double, 20>& v) {
    double mu = 0;
    for (double x : v) mu += x;
    mu /= 20.0;
    double var = 0;
    for (double x : v) var += (x - mu) * (x - mu);
    var /= 20.0;
    std::array<double, 20> out{};
    if (var <= 0) return out;  // constant index encodes as zeros
    double inv = 1.0 / std::sqrt(var);
    for (int i = 0; i < 20; ++i) out[i] = (v[i] - mu) * inv;
    return out;
}

}  // namespace

Tensor encode_aaindex(const std::string& window,
                      const std::vector<std::string>& index_ids) {
    validate_window(window);
    int L = static_cast<int>(window.size());
    int N = static_cast<int>(index_ids.size());
    if (N == 0) throw ConfigError("encode_aaindex: empty index list");
    std::vector<std::array<double, 20>> cols;
    cols.reserve(N);
    for (const auto& id : index_ids) cols.push_back(znorm(aaindex_entry(id).values));
    std::vector<double> out(static_cast<size_t>(L) * N, 0.0);
    for (int i = 0; i < L; ++i) {
        int a = aa_index(window[i]);
        if (a < 0) continue;
        for (int j = 0; j < N; ++j) out[i * N + j] = cols[j][a];
    }
    return Tensor::from(Shape::of(L, N), std::move(out));
}

Tensor encode_pseaac(const std::string& window, int lambda_rank,
                     double weight) {
    validate_window(window);
    if (lambda_rank < 1)
        throw ConfigError("encode_pseaac: lambda must be >= 1");
    if (weight <= 0 || weight > 1)
        throw ConfigError("encode_pseaac: weight must lie in (0,1]");
    std::string seq;
    for (char c : window)
        if (aa_index(c) >= 0) seq.push_back(c);
    int n = static_cast<int>(seq.size());
    if (lambda_rank >= n)
        throw ConfigError("encode_pseaac: lambda " + std::to_string(lambda_rank) +
                          " must be smaller than effective window length " +
                          std::to_string(n));

    // three z-normalized correlation properties, classic PseAAC choice
    static const std::array<std::array<double, 20>, 3> props = {
        znorm(aaindex_entry("KYTJ820101").values),
        znorm(aaindex_entry("HOPT810101").values),
        znorm(aaindex_entry("SIDECHAIN_MASS").values)};

    std::array<double, 20> freq{};
    for (char c : seq) freq[aa_index(c)] += 1.0;
    for (auto& f : freq) f /= n;

    std::vector<double> theta(lambda_rank, 0.0);
    for (int j = 1; j <= lambda_rank; ++j) {
        double acc = 0.0;
        for (int i = 0; i + j < n; ++i) {
            int a = aa_index(seq[i]), b = aa_index(seq[i + j]);
            double t = 0.0;
            for (const auto& p : props) {
                double d = p[a] - p[b];
                t += d * d;
            }
            acc += t / 3.0;
        }
        theta[j - 1] = acc / (n - j);
    }

    double theta_sum = 0.0;
    for (double t : theta) theta_sum += t;
    double denom = 1.0 + weight * theta_sum;

    int D = 20 + lambda_rank;
    std::vector<double> row(D);
    for (int u = 0; u < 20; ++u) row[u] = freq[u] / denom;
    for (int j = 0; j < lambda_rank; ++j)
        row[20 + j] = weight * theta[j] / denom;

    int L = static_cast<int>(window.size());
    std::vector<double> out(static_cast<size_t>(L) * D);
    for (int i = 0; i < L; ++i)
        std::memcpy(out.data() + static_cast<long long>(i) * D, row.data(),
                    sizeof(double) * D);
    return Tensor::from(Shape::of(L, D), std::move(out));
}

Tensor align_dims(const Tensor& x, int target, const AlignParams& p) {
    if (target != 256 && target != 512)
        throw ConfigError("align_dims: target must be 256 or 512, got " +
                          std::to_string(target));
    if (x.rank() != 3)
        throw DimError("align_dims expects [B,L,d_in], got " + x.shape().str());
    Tensor y0 = linear(x, p.w, p.b);
    Tensor y1 = conv1d(gelu(y0), p.conv_k, p.conv_b);
    return add(y0, y1);
}

}  // namespace uniptms
