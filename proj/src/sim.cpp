#include "voxdec/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "voxdec/rng.hpp"

namespace voxdec {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Margin keeping a voxel's sources comfortably inside the conducting sphere.
double inside_radius(double head_radius_mm, double voxel_size_mm) {
    return head_radius_mm - 0.25 * voxel_size_mm;
}

struct Lattice {
    Eigen::Vector3i dims;
    Eigen::Vector3d origin;
};

Lattice bounding_lattice(double voxel_size_mm, double head_radius_mm) {
    const int half = static_cast<int>(std::ceil(head_radius_mm / voxel_size_mm));
    Lattice lat;
    lat.dims = Eigen::Vector3i::Constant(2 * half);
    const double o = -(half - 0.5) * voxel_size_mm;
    lat.origin = Eigen::Vector3d::Constant(o);
    return lat;
}

// Deterministic k-means (k-means++ seeding, Lloyd iterations) over voxel centers.
std::vector<int> kmeans_labels(const std::vector<Eigen::Vector3d>& pts, int k, Rng& rng) {
    const int n = static_cast<int>(pts.size());
    std::vector<Eigen::Vector3d> centroids;
    centroids.reserve(static_cast<std::size_t>(k));
    centroids.push_back(pts[static_cast<std::size_t>(rng.uniform_int(0, n - 1))]);
    std::vector<double> d2(static_cast<std::size_t>(n), 0.0);
    while (static_cast<int>(centroids.size()) < k) {
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::max();
            for (const auto& c : centroids) best = std::min(best, (pts[static_cast<std::size_t>(i)] - c).squaredNorm());
            d2[static_cast<std::size_t>(i)] = best;
            total += best;
        }
        double target = rng.uniform() * total;
        int pick = n - 1;
        for (int i = 0; i < n; ++i) {
            target -= d2[static_cast<std::size_t>(i)];
            if (target <= 0.0) {
                pick = i;
                break;
            }
        }
        centroids.push_back(pts[static_cast<std::size_t>(pick)]);
    }

    std::vector<int> label(static_cast<std::size_t>(n), 0);
    for (int iter = 0; iter < 30; ++iter) {
        bool changed = false;
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double bestd = std::numeric_limits<double>::max();
            for (int c = 0; c < k; ++c) {
                const double d = (pts[static_cast<std::size_t>(i)] - centroids[static_cast<std::size_t>(c)]).squaredNorm();
                if (d < bestd) {
                    bestd = d;
                    best = c;
                }
            }
            if (label[static_cast<std::size_t>(i)] != best) {
                label[static_cast<std::size_t>(i)] = best;
                changed = true;
            }
        }
        std::vector<Eigen::Vector3d> sums(static_cast<std::size_t>(k), Eigen::Vector3d::Zero());
        std::vector<int> counts(static_cast<std::size_t>(k), 0);
        for (int i = 0; i < n; ++i) {
            sums[static_cast<std::size_t>(label[static_cast<std::size_t>(i)])] += pts[static_cast<std::size_t>(i)];
            counts[static_cast<std::size_t>(label[static_cast<std::size_t>(i)])]++;
        }
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] == 0) {
                // revive an empty cluster on the point farthest from its centroid
                int far_i = 0;
                double far_d = -1.0;
                for (int i = 0; i < n; ++i) {
                    const double d =
                        (pts[static_cast<std::size_t>(i)] - centroids[static_cast<std::size_t>(label[static_cast<std::size_t>(i)])]).squaredNorm();
                    if (d > far_d) {
                        far_d = d;
                        far_i = i;
                    }
                }
                centroids[static_cast<std::size_t>(c)] = pts[static_cast<std::size_t>(far_i)];
                label[static_cast<std::size_t>(far_i)] = c;
                changed = true;
            } else {
                centroids[static_cast<std::size_t>(c)] = sums[static_cast<std::size_t>(c)] / counts[static_cast<std::size_t>(c)];
            }
        }
        if (!changed && iter > 0) break;
    }
    return label;
}

}  // namespace

std::vector<int> Anatomy::region_voxels(int region_id) const {
    std::vector<int> out;
    for (int v = 0; v < n_voxels(); ++v)
        if (atlas[static_cast<std::size_t>(v)] == region_id) out.push_back(v);
    return out;
}

Eigen::Vector3d Anatomy::region_centroid(int region_id) const {
    Eigen::Vector3d c = Eigen::Vector3d::Zero();
    const auto vs = region_voxels(region_id);
    if (vs.empty()) throw InputError("region " + std::to_string(region_id) + " has no voxels");
    for (int v : vs) c += centers[static_cast<std::size_t>(v)];
    return c / static_cast<double>(vs.size());
}

double StimulusTrack::speech_fraction() const {
    if (labels.empty()) return 0.0;
    const auto n1 = std::count(labels.begin(), labels.end(), std::uint8_t{1});
    return static_cast<double>(n1) / static_cast<double>(labels.size());
}

std::vector<std::size_t> StimulusTrack::onsets_from_labels(const std::vector<std::uint8_t>& labels) {
    std::vector<std::size_t> on;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == 1 && (i == 0 ? false : labels[i - 1] == 0)) on.push_back(i);
    return on;
}

void SensorRecording::validate() const {
    if (n_channels() != sensors.n_sensors()) throw InputError("recording channels do not match sensor count");
    if (stimulus.n_samples() != n_samples()) throw InputError("stimulus length does not match recording");
}

Anatomy build_template_anatomy(double voxel_size_mm, double head_radius_mm, std::uint64_t seed,
                               int n_atlas_regions, double unassigned_fraction) {
    if (voxel_size_mm < 5.0 || voxel_size_mm > 30.0)
        throw ConfigError("voxel_size_mm must be in [5, 30]");
    if (head_radius_mm <= 2.0 * voxel_size_mm)
        throw ConfigError("head_radius_mm must exceed 2 * voxel_size_mm");
    if (n_atlas_regions < 1) throw ConfigError("n_atlas_regions must be positive");
    if (unassigned_fraction < 0.0 || unassigned_fraction >= 1.0)
        throw ConfigError("unassigned_fraction must be in [0, 1)");

    Anatomy a;
    a.voxel_size_mm = voxel_size_mm;
    a.head_radius_mm = head_radius_mm;
    const Lattice lat = bounding_lattice(voxel_size_mm, head_radius_mm);
    a.lattice_dims = lat.dims;
    a.lattice_origin = lat.origin;
    a.inside_mask.assign(static_cast<std::size_t>(lat.dims.x()) * static_cast<std::size_t>(lat.dims.y()) *
                             static_cast<std::size_t>(lat.dims.z()),
                         0);

    const double r_in = inside_radius(head_radius_mm, voxel_size_mm);
    for (int x = 0; x < lat.dims.x(); ++x)
        for (int y = 0; y < lat.dims.y(); ++y)
            for (int z = 0; z < lat.dims.z(); ++z) {
                const Eigen::Vector3i cell(x, y, z);
                const Eigen::Vector3d c = a.cell_center(cell);
                if (c.norm() <= r_in) {
                    a.inside_mask[a.flat_cell(cell)] = 1;
                    a.cells.push_back(cell);
                    a.centers.push_back(c);
                }
            }
    if (a.n_voxels() < 50)
        throw ConfigError("voxel size too large: only " + std::to_string(a.n_voxels()) +
                          " voxels inside the head sphere (need >= 50)");

    // Synthetic atlas: k-means cells over centers, then the farthest third of
    // each cell relabeled unassigned (0).
    Rng rng(Rng::derive(seed, "atlas"));
    const int k = n_atlas_regions;
    auto label = kmeans_labels(a.centers, k, rng);
    a.atlas.assign(static_cast<std::size_t>(a.n_voxels()), 0);
    for (int c = 0; c < k; ++c) {
        std::vector<int> members;
        for (int v = 0; v < a.n_voxels(); ++v)
            if (label[static_cast<std::size_t>(v)] == c) members.push_back(v);
        Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
        for (int v : members) centroid += a.centers[static_cast<std::size_t>(v)];
        centroid /= static_cast<double>(members.size());
        std::sort(members.begin(), members.end(), [&](int l, int r) {
            const double dl = (a.centers[static_cast<std::size_t>(l)] - centroid).squaredNorm();
            const double dr = (a.centers[static_cast<std::size_t>(r)] - centroid).squaredNorm();
            if (dl != dr) return dl < dr;
            return l < r;
        });
        const auto keep = members.size() - static_cast<std::size_t>(std::floor(unassigned_fraction * static_cast<double>(members.size())));
        for (std::size_t i = 0; i < keep; ++i) a.atlas[static_cast<std::size_t>(members[i])] = c + 1;
    }
    a.n_regions = k;
    a.subject_affine = Affine::identity();
    a.subject_id = "template";
    return a;
}

Anatomy derive_subject_anatomy(const Anatomy& tmpl, std::uint64_t subject_seed, double distortion_scale) {
    if (distortion_scale < 0.0 || distortion_scale > 0.2)
        throw ConfigError("distortion_scale must be in [0, 0.2]");

    Rng rng(Rng::derive(subject_seed, "subject-affine"));
    const double level = distortion_scale / 0.2;  // 0..1
    const double angle_max = (10.0 * kPi / 180.0) * level;
    Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
    if (axis.norm() < 1e-12) axis = Eigen::Vector3d::UnitZ();
    axis.normalize();
    const double angle = rng.uniform(-angle_max, angle_max);
    Eigen::Matrix3d scale = Eigen::Matrix3d::Identity();
    for (int i = 0; i < 3; ++i)
        scale(i, i) = rng.uniform(1.0 - distortion_scale, 1.0 + distortion_scale);
    const double t_max = 0.5 * tmpl.voxel_size_mm * level;
    Eigen::Vector3d trans;
    for (int i = 0; i < 3; ++i) trans[i] = rng.uniform(-t_max, t_max);

    const Eigen::Matrix3d rot = Eigen::AngleAxisd(angle, axis).toRotationMatrix();
    const Affine affine = Affine::from_parts(rot * scale, trans);
    const Affine inv = affine.inverse();

    Anatomy s;
    s.voxel_size_mm = tmpl.voxel_size_mm;
    s.head_radius_mm = tmpl.head_radius_mm;
    s.lattice_dims = tmpl.lattice_dims;
    s.lattice_origin = tmpl.lattice_origin;
    s.inside_mask.assign(tmpl.inside_mask.size(), 0);
    s.subject_affine = affine;
    s.n_regions = tmpl.n_regions;
    s.subject_id = "subject-" + std::to_string(subject_seed);

    const double r_in = inside_radius(s.head_radius_mm, s.voxel_size_mm);
    for (int x = 0; x < s.lattice_dims.x(); ++x)
        for (int y = 0; y < s.lattice_dims.y(); ++y)
            for (int z = 0; z < s.lattice_dims.z(); ++z) {
                const Eigen::Vector3i cell(x, y, z);
                const Eigen::Vector3d c = s.cell_center(cell);
                // inside the transformed brain, and still inside the conductor
                if (c.norm() > r_in) continue;
                if (inv.apply(c).norm() > r_in) continue;
                s.inside_mask[s.flat_cell(cell)] = 1;
                s.cells.push_back(cell);
                s.centers.push_back(c);
            }
    if (s.n_voxels() < 50) throw ConfigError("derived subject anatomy has fewer than 50 voxels");

    // carry atlas labels through the affine by nearest template voxel center
    s.atlas.resize(static_cast<std::size_t>(s.n_voxels()));
    for (int v = 0; v < s.n_voxels(); ++v) {
        const Eigen::Vector3d p = inv.apply(s.centers[static_cast<std::size_t>(v)]);
        int best = 0;
        double best_d = std::numeric_limits<double>::max();
        for (int t = 0; t < tmpl.n_voxels(); ++t) {
            const double d = (tmpl.centers[static_cast<std::size_t>(t)] - p).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = t;
            }
        }
        s.atlas[static_cast<std::size_t>(v)] = tmpl.atlas[static_cast<std::size_t>(best)];
    }
    return s;
}

SensorArray build_sensor_array(const std::string& layout_id, int n_sensors, double shell_radius_mm,
                               std::uint64_t seed, double head_radius_mm) {
    if (n_sensors < 16) throw ConfigError("n_sensors must be >= 16");
    if (shell_radius_mm <= 0.0) throw ConfigError("shell_radius_mm must be positive");
    if (head_radius_mm > 0.0 && shell_radius_mm <= head_radius_mm)
        throw ConfigError("sensor shell must lie outside the head sphere");

    Rng rng(Rng::derive(seed ^ fnv1a(layout_id), "sensor-array"));
    const double phase = rng.uniform(0.0, 2.0 * kPi);
    SensorArray arr;
    arr.layout_id = layout_id;
    arr.positions.resize(n_sensors, 3);
    arr.orientations.resize(n_sensors, 3);

    const double golden = (1.0 + std::sqrt(5.0)) / 2.0;
    for (int i = 0; i < n_sensors; ++i) {
        // Fibonacci spiral on the upper hemisphere plus a small seeded jitter
        const double z = (i + 0.5) / n_sensors;  // cos(theta) in (0, 1)
        double theta = std::acos(z);
        double phi = 2.0 * kPi * (i / golden) + phase;
        theta = std::clamp(theta + rng.uniform(-0.015, 0.015), 0.0, kPi / 2.0);
        phi += rng.uniform(-0.015, 0.015);
        Eigen::Vector3d u(std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta));
        arr.positions.row(i) = (shell_radius_mm * u).transpose();
        arr.orientations.row(i) = u.transpose();
    }
    return arr;
}

double dipole_field(const Eigen::Vector3d& dipole_pos, const Eigen::Vector3d& moment,
                    const Eigen::Vector3d& sensor_pos, const Eigen::Vector3d& sensor_ori) {
    // Sarvas (1987), sphere centered at the origin, unit permeability scale.
    const Eigen::Vector3d c = moment.cross(dipole_pos);
    // Radial and center dipoles have Q x r0 = 0 and generate no external field;
    // snap numerically-parallel moments to the exact zero.
    if (c.norm() <= 1e-12 * moment.norm() * dipole_pos.norm()) return 0.0;

    const Eigen::Vector3d r = sensor_pos;
    const Eigen::Vector3d a = r - dipole_pos;
    const double an = a.norm();
    const double rn = r.norm();
    if (an < 1e-12 || rn < 1e-12) throw InputError("sensor coincides with dipole or sphere center");
    const double adotr = a.dot(r);
    const double F = an * (rn * an + rn * rn - dipole_pos.dot(r));
    const Eigen::Vector3d gradF = (an * an / rn + adotr / an + 2.0 * an + 2.0 * rn) * r -
                                  (an + 2.0 * rn + adotr / an) * dipole_pos;
    const Eigen::Vector3d B = (F * c - c.dot(r) * gradF) / (F * F);
    return B.dot(sensor_ori);
}

LeadField compute_lead_field(const Anatomy& anatomy, const SensorArray& sensors) {
    for (int s = 0; s < sensors.n_sensors(); ++s)
        if (sensors.positions.row(s).norm() <= anatomy.head_radius_mm)
            throw InputError("sensor " + std::to_string(s) + " lies inside the head sphere");

    LeadField lf;
    lf.n_voxels = anatomy.n_voxels();
    lf.matrix.resize(sensors.n_sensors(), 3 * lf.n_voxels);
    for (int v = 0; v < lf.n_voxels; ++v) {
        const Eigen::Vector3d r0 = anatomy.centers[static_cast<std::size_t>(v)];
        if (r0.norm() <= 1e-9) {
            log_warn("voxel " + std::to_string(v) + " sits at the sphere center; lead-field columns set to zero");
            lf.matrix.middleCols(3 * v, 3).setZero();
            continue;
        }
        for (int comp = 0; comp < 3; ++comp) {
            const Eigen::Vector3d q = Eigen::Vector3d::Unit(comp);
            for (int s = 0; s < sensors.n_sensors(); ++s)
                lf.matrix(s, 3 * v + comp) =
                    dipole_field(r0, q, sensors.positions.row(s), sensors.orientations.row(s));
        }
    }
    return lf;
}

StimulusTrack make_stimulus_track(double duration_s, double rate_hz, double speech_fraction,
                                  double mean_segment_s, std::uint64_t seed) {
    if (speech_fraction <= 0.0 || speech_fraction >= 1.0)
        throw ConfigError("speech_fraction must be in (0, 1)");
    if (rate_hz <= 0.0) throw ConfigError("rate_hz must be positive");
    if (mean_segment_s <= 0.0) throw ConfigError("mean_segment_s must be positive");

    StimulusTrack best;
    best.sampling_rate_hz = rate_hz;
    const auto n = static_cast<std::size_t>(std::llround(duration_s * rate_hz));
    if (n == 0) return best;

    // Mean speech/silence segment lengths chosen so the long-run fraction hits
    // the target while the overall mean segment stays at mean_segment_s.
    const double mean_speech = 2.0 * speech_fraction * mean_segment_s;
    const double mean_silence = 2.0 * (1.0 - speech_fraction) * mean_segment_s;

    double best_err = std::numeric_limits<double>::max();
    for (int attempt = 0; attempt < 32; ++attempt) {
        Rng rng(Rng::derive(seed, "stimulus", static_cast<std::uint64_t>(attempt)));
        std::vector<std::uint8_t> labels;
        labels.reserve(n);
        std::uint8_t state = 0;  // start in silence so the first onset is a clean transition
        while (labels.size() < n) {
            const double mean = state == 1 ? mean_speech : mean_silence;
            const auto seg = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(rng.exponential(mean) * rate_hz)));
            for (std::size_t i = 0; i < seg && labels.size() < n; ++i) labels.push_back(state);
            state = static_cast<std::uint8_t>(1 - state);
        }
        const auto n1 = std::count(labels.begin(), labels.end(), std::uint8_t{1});
        const double frac = static_cast<double>(n1) / static_cast<double>(n);
        const double err = std::abs(frac - speech_fraction);
        if (err < best_err) {
            best_err = err;
            best.labels = std::move(labels);
        }
        if (best_err <= 0.1) break;
    }
    best.onsets = StimulusTrack::onsets_from_labels(best.labels);
    return best;
}

Lateralization lateralization_from_string(const std::string& s) {
    if (s == "bilateral") return Lateralization::bilateral;
    if (s == "left") return Lateralization::left;
    if (s == "right") return Lateralization::right;
    throw ConfigError("unknown lateralization: " + s + " (expected bilateral|left|right)");
}

double evoked_kernel(double t_s, double peak_s) {
    if (t_s <= 0.0) return 0.0;
    const double x = t_s / peak_s;
    return x * std::exp(1.0 - x);
}

std::vector<int> active_voxels(const Anatomy& anatomy, const ResponseConfig& response) {
    std::vector<int> active;
    for (int id : response.region_ids) {
        if (id < 1 || id > anatomy.n_regions)
            throw ConfigError("unknown response region id " + std::to_string(id));
        for (int v : anatomy.region_voxels(id)) {
            const double x = anatomy.centers[static_cast<std::size_t>(v)].x();
            if (response.lateralization == Lateralization::right && x <= 0.0) continue;
            if (response.lateralization == Lateralization::left && x >= 0.0) continue;
            active.push_back(v);
        }
    }
    std::sort(active.begin(), active.end());
    active.erase(std::unique(active.begin(), active.end()), active.end());
    if (!response.region_ids.empty() && active.empty())
        throw InputError("no active voxels remain after lateralization filtering");
    return active;
}

Eigen::MatrixXd simulate_sources(const Anatomy& anatomy, const StimulusTrack& stimulus,
                                 const NoiseConfig& noise, const ResponseConfig& response,
                                 std::uint64_t seed, const Anatomy* template_anatomy) {
    const auto T = static_cast<Eigen::Index>(stimulus.n_samples());
    const Eigen::Index rows = 3 * anatomy.n_voxels();
    Eigen::MatrixXd src = Eigen::MatrixXd::Zero(rows, T);
    const double rate = stimulus.sampling_rate_hz;

    // AR(1) background in every source component
    if (noise.source_noise_std > 0.0 && T > 0) {
        Rng rng(Rng::derive(seed, "source-background"));
        const double rho = noise.ar_coeff;
        const double innov = noise.source_noise_std * std::sqrt(std::max(0.0, 1.0 - rho * rho));
        for (Eigen::Index r = 0; r < rows; ++r) {
            double x = noise.source_noise_std * rng.normal();
            src(r, 0) += x;
            for (Eigen::Index t = 1; t < T; ++t) {
                x = rho * x + innov * rng.normal();
                src(r, t) += x;
            }
        }
    }

    const auto active = active_voxels(anatomy, response);
    if (!active.empty() && T > 0 &&
        (response.evoked_amplitude != 0.0 || response.sustained_amplitude != 0.0)) {
        // shared drive: transient kernel at onsets + smoothed stimulus box
        Eigen::VectorXd drive = Eigen::VectorXd::Zero(T);
        if (response.evoked_amplitude != 0.0) {
            const auto support = static_cast<Eigen::Index>(std::llround(8.0 * response.peak_s * rate));
            for (std::size_t on : stimulus.onsets)
                for (Eigen::Index k = 0; k < support; ++k) {
                    const Eigen::Index t = static_cast<Eigen::Index>(on) + k;
                    if (t >= T) break;
                    drive[t] += response.evoked_amplitude * evoked_kernel(static_cast<double>(k) / rate, response.peak_s);
                }
        }
        if (response.sustained_amplitude != 0.0) {
            const auto h = std::max<Eigen::Index>(1, static_cast<Eigen::Index>(std::llround(0.05 * rate)));
            for (Eigen::Index t = 0; t < T; ++t) {
                double acc = 0.0;
                Eigen::Index cnt = 0;
                for (Eigen::Index k = -h; k <= h; ++k) {
                    const Eigen::Index u = t + k;
                    if (u < 0 || u >= T) continue;
                    acc += stimulus.labels[static_cast<std::size_t>(u)];
                    ++cnt;
                }
                drive[t] += response.sustained_amplitude * acc / static_cast<double>(cnt);
            }
        }

        // Orientations are keyed per voxel. With a template anatomy the key is
        // the nearest template voxel and the drawn vector is expressed in the
        // template frame, so subjects share the response structure.
        const std::uint64_t ori_seed =
            response.orientation_seed != 0 ? response.orientation_seed : Rng::derive(seed, "response");
        const Eigen::Matrix3d rot =
            template_anatomy ? anatomy.subject_affine.rotation() : Eigen::Matrix3d::Identity();
        const Affine inv_affine =
            template_anatomy ? anatomy.subject_affine.inverse() : Affine::identity();
        for (int v : active) {
            int key = v;
            Eigen::Vector3d frame_radial = anatomy.centers[static_cast<std::size_t>(v)].normalized();
            if (template_anatomy) {
                const Eigen::Vector3d p = inv_affine.apply(anatomy.centers[static_cast<std::size_t>(v)]);
                double best = std::numeric_limits<double>::max();
                for (int t = 0; t < template_anatomy->n_voxels(); ++t) {
                    const double d = (template_anatomy->centers[static_cast<std::size_t>(t)] - p).squaredNorm();
                    if (d < best) {
                        best = d;
                        key = t;
                    }
                }
                frame_radial = template_anatomy->centers[static_cast<std::size_t>(key)].normalized();
            }
            Rng rng(Rng::derive(ori_seed, "orientation", static_cast<std::uint64_t>(key)));
            Eigen::Vector3d ori;
            do {
                const Eigen::Vector3d raw(rng.normal(), rng.normal(), rng.normal());
                ori = raw - raw.dot(frame_radial) * frame_radial;  // radial dipoles are invisible
            } while (ori.norm() < 1e-6);
            ori.normalize();
            const double amp = rng.uniform(0.7, 1.0);
            if (template_anatomy) {
                // into the subject frame, re-tangentialized there
                const Eigen::Vector3d r_subj = anatomy.centers[static_cast<std::size_t>(v)].normalized();
                ori = rot * ori;
                ori -= ori.dot(r_subj) * r_subj;
                if (ori.norm() < 1e-6) continue;  // rotated into the radial direction: invisible anyway
                ori.normalize();
            }
            src.middleRows(3 * v, 3) += (amp * ori) * drive.transpose();
        }
    }
    return src;
}

SensorRecording project_to_sensors(const LeadField& leadfield, const SensorArray& sensors,
                                   const Eigen::MatrixXd& sources, const StimulusTrack& stimulus,
                                   const NoiseConfig& noise, std::uint64_t seed) {
    if (sources.rows() != leadfield.matrix.cols())
        throw InputError("source rows do not match lead-field columns");
    if (static_cast<std::size_t>(sources.cols()) != stimulus.n_samples())
        throw InputError("source samples do not match stimulus length");
    if (leadfield.matrix.rows() != sensors.n_sensors())
        throw InputError("lead-field rows do not match sensor count");

    SensorRecording rec;
    rec.data = leadfield.matrix * sources;
    rec.sampling_rate_hz = stimulus.sampling_rate_hz;
    rec.stimulus = stimulus;
    rec.sensors = sensors;
    if (noise.sensor_noise_rel > 0.0 && rec.data.size() > 0) {
        const double rms = std::sqrt(rec.data.array().square().mean());
        const double sigma = noise.sensor_noise_rel * rms;
        if (sigma > 0.0) {
            Rng rng(Rng::derive(seed, "sensor-noise"));
            for (Eigen::Index c = 0; c < rec.data.cols(); ++c)
                for (Eigen::Index r = 0; r < rec.data.rows(); ++r) rec.data(r, c) += sigma * rng.normal();
        }
    }
    return rec;
}

SensorRecording simulate_recording(const Anatomy& anatomy, const LeadField& leadfield,
                                   const SensorArray& sensors, const StimulusTrack& stimulus,
                                   const NoiseConfig& noise, const ResponseConfig& response,
                                   std::uint64_t seed, const Anatomy* template_anatomy) {
    const Eigen::MatrixXd src = simulate_sources(anatomy, stimulus, noise, response, seed, template_anatomy);
    return project_to_sensors(leadfield, sensors, src, stimulus, noise, Rng::derive(seed, "project"));
}

}  // namespace voxdec
