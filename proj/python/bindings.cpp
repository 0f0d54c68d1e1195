// Python bindings over the main operations: spectrum diagnostics, the core
// losses, the 6D rotation map, the synthetic renderer and landmark metrics.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "emo/evalkit.hpp"
#include "emo/latent_analysis.hpp"
#include "emo/losses.hpp"
#include "emo/rotation6d.hpp"
#include "emo/synthworld.hpp"
#include "emo/toytrain.hpp"

namespace py = pybind11;
using namespace emo;

namespace {

latent::LatentSet to_latent_set(const py::array_t<double>& arr) {
  auto buf = arr.request();
  if (buf.ndim != 2) throw DimensionError("expected a 2-D array of latents");
  latent::LatentSet z;
  z.n = static_cast<int>(buf.shape[0]);
  z.d = static_cast<int>(buf.shape[1]);
  z.data.resize(static_cast<size_t>(z.n) * z.d);
  auto view = arr.unchecked<2>();
  for (int i = 0; i < z.n; ++i)
    for (int j = 0; j < z.d; ++j) z.data[static_cast<size_t>(i) * z.d + j] = view(i, j);
  return z;
}

py::array_t<double> to_array(const std::vector<double>& v) {
  py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

py::array_t<double> to_matrix(const std::vector<double>& v, int rows, int cols) {
  py::array_t<double> out({rows, cols});
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

rot6d::Mat3 to_mat3(const py::array_t<double>& arr) {
  auto buf = arr.request();
  if (buf.size != 9) throw DimensionError("expected a 3x3 matrix");
  rot6d::Mat3 m{};
  std::copy(static_cast<double*>(buf.ptr), static_cast<double*>(buf.ptr) + 9, m.begin());
  return m;
}

latent::SpectrumSummary summary_from(const py::array_t<double>& lam) {
  std::vector<double> eig(lam.data(), lam.data() + lam.size());
  double total = 0.0;
  for (double v : eig) total += v;
  latent::SpectrumSummary s;
  double acc = 0.0;
  for (double v : eig) {
    s.ev.push_back(v / total);
    acc += v / total;
    s.cumulative.push_back(acc);
  }
  s.auc_z = latent::auc_z(s);
  return s;
}

}  // namespace

PYBIND11_MODULE(_emolatent, m) {
  m.doc() = "toy-scale latent-expression laboratory (C++ core)";

  py::register_exception<ConfigError>(m, "ConfigError");
  py::register_exception<DomainError>(m, "DomainError");
  py::register_exception<DimensionError>(m, "DimensionError");

  // ---- latent analysis ----
  m.def(
      "pca_spectrum",
      [](const py::array_t<double>& z) {
        auto [model, summary] = latent::pca_spectrum(to_latent_set(z));
        py::dict out;
        out["eigenvalues"] = to_array(model.eigenvalues);
        out["components"] = to_matrix(model.components, model.d, model.d);
        out["ev"] = to_array(summary.ev);
        out["cumulative"] = to_array(summary.cumulative);
        out["auc_z"] = summary.auc_z;
        return out;
      },
      py::arg("latents"), "standardized-correlation eigenspectrum of an n x d latent set");

  m.def(
      "auc_z", [](const py::array_t<double>& lam) { return summary_from(lam).auc_z; },
      py::arg("eigenvalues"), "area under the cumulative explained-variance curve");

  m.def(
      "components_to_threshold",
      [](const py::array_t<double>& lam, double tau) {
        return latent::components_to_threshold(summary_from(lam), tau);
      },
      py::arg("eigenvalues"), py::arg("tau"));

  m.def(
      "distill_mouth_basis",
      [](const py::array_t<double>& z, int k) {
        auto basis = latent::distill_mouth_basis(to_latent_set(z), k);
        py::dict out;
        out["mean"] = to_array(basis.mean);
        out["components"] = to_matrix(basis.components, basis.d, basis.k);
        out["ev"] = to_array(basis.source_spectrum.ev);
        return out;
      },
      py::arg("latents"), py::arg("k"));

  // ---- losses ----
  m.def(
      "cosine_sim",
      [](const py::array_t<double>& a, const py::array_t<double>& b) {
        ad::Tape tape;
        std::vector<double> av(a.data(), a.data() + a.size());
        std::vector<double> bv(b.data(), b.data() + b.size());
        ad::Tensor ta = tape.leaf(ad::Shape{static_cast<int>(av.size())}, av, false);
        ad::Tensor tb = tape.leaf(ad::Shape{static_cast<int>(bv.size())}, bv, false);
        return losses::cosine_sim(ta, tb).scalar();
      },
      py::arg("a"), py::arg("b"));

  m.def(
      "sdm_loss",
      [](const py::array_t<double>& zs, const py::array_t<double>& zd, const std::string& tag) {
        ad::Tape tape;
        std::vector<double> a(zs.data(), zs.data() + zs.size());
        std::vector<double> b(zd.data(), zd.data() + zd.size());
        losses::LossWeights w;
        auto t = tag == "extreme" ? losses::DatasetTag::extreme : losses::DatasetTag::common;
        return losses::sdm_loss(tape.leaf(ad::Shape{static_cast<int>(a.size())}, a, false),
                                tape.leaf(ad::Shape{static_cast<int>(b.size())}, b, false), t, w)
            .scalar();
      },
      py::arg("z_s"), py::arg("z_d"), py::arg("tag") = "common");

  m.def(
      "cosface_loss",
      [](const std::vector<std::pair<py::array_t<double>, py::array_t<double>>>& pos,
         const std::vector<std::pair<py::array_t<double>, py::array_t<double>>>& neg, double s,
         double mm) {
        ad::Tape tape;
        auto lift =
            [&](const std::vector<std::pair<py::array_t<double>, py::array_t<double>>>& pairs) {
              losses::PairList out;
              for (const auto& [a, b] : pairs) {
                std::vector<double> av(a.data(), a.data() + a.size());
                std::vector<double> bv(b.data(), b.data() + b.size());
                out.push_back({tape.leaf(ad::Shape{static_cast<int>(av.size())}, av, false),
                               tape.leaf(ad::Shape{static_cast<int>(bv.size())}, bv, false)});
              }
              return out;
            };
        return losses::cosface_loss(lift(pos), lift(neg), s, mm).scalar();
      },
      py::arg("positives"), py::arg("negatives"), py::arg("s") = 5.0, py::arg("m") = 0.2);

  // ---- rotation ----
  m.def(
      "rot6d_to_matrix",
      [](const py::array_t<double>& six) {
        if (six.size() != 6) throw DimensionError("expected 6 values");
        const double* p = six.data();
        rot6d::Rotation6D r{{p[0], p[1], p[2]}, {p[3], p[4], p[5]}};
        rot6d::Mat3 mat = rot6d::to_rotation(r);
        return to_matrix(std::vector<double>(mat.begin(), mat.end()), 3, 3);
      },
      py::arg("six"));

  m.def(
      "matrix_to_rot6d",
      [](const py::array_t<double>& mat) {
        rot6d::Rotation6D r = rot6d::from_rotation(to_mat3(mat));
        return to_array({r.a1[0], r.a1[1], r.a1[2], r.a2[0], r.a2[1], r.a2[2]});
      },
      py::arg("matrix"));

  m.def(
      "geodesic_distance",
      [](const py::array_t<double>& a, const py::array_t<double>& b) {
        return rot6d::geodesic_distance(to_mat3(a), to_mat3(b));
      },
      py::arg("a"), py::arg("b"));

  // ---- synthetic world ----
  m.def(
      "render",
      [](const py::array_t<double>& identity, const py::array_t<double>& mouth,
         const py::array_t<double>& upper, const py::array_t<double>& rotation,
         const py::array_t<double>& translation) {
        world::FactorVector f;
        if (identity.size() != 4 || mouth.size() != 3 || upper.size() != 3)
          throw DimensionError("expected identity[4], mouth[3], upper[3]");
        std::copy(identity.data(), identity.data() + 4, f.identity.begin());
        std::copy(mouth.data(), mouth.data() + 3, f.mouth.begin());
        std::copy(upper.data(), upper.data() + 3, f.upper.begin());
        f.pose.rotation = to_mat3(rotation);
        if (translation.size() != 3) throw DimensionError("expected translation[3]");
        std::copy(translation.data(), translation.data() + 3, f.pose.translation.begin());
        world::ToyFace face = world::render(f);
        py::dict out;
        out["image"] = to_matrix(face.image, face.h, face.w);
        py::array_t<double> lm({world::kNumLandmarks, 2});
        for (int l = 0; l < world::kNumLandmarks; ++l) {
          lm.mutable_at(l, 0) = face.landmarks[static_cast<size_t>(l)][0];
          lm.mutable_at(l, 1) = face.landmarks[static_cast<size_t>(l)][1];
        }
        out["landmarks"] = lm;
        auto mask = [&](const std::vector<uint8_t>& m8) {
          py::array_t<bool> arr({face.h, face.w});
          for (int i = 0; i < face.h * face.w; ++i)
            arr.mutable_data()[i] = m8[static_cast<size_t>(i)] != 0;
          return arr;
        };
        out["mask_mouth"] = mask(face.mask_mouth);
        out["mask_eyes"] = mask(face.mask_eyes);
        out["mask_ears"] = mask(face.mask_ears);
        out["mask_face"] = mask(face.mask_face);
        return out;
      },
      py::arg("identity"), py::arg("mouth"), py::arg("upper"), py::arg("rotation"),
      py::arg("translation"), "deterministic differentiable blob render of a factor vector");

  // ---- evaluation ----
  m.def(
      "normalize_landmarks",
      [](const py::array_t<double>& frame) {
        if (frame.ndim() != 2 || frame.shape(0) != world::kNumLandmarks || frame.shape(1) != 2)
          throw DimensionError("expected a 14x2 landmark frame");
        evalkit::LandmarkFrame f;
        auto view = frame.unchecked<2>();
        for (int l = 0; l < world::kNumLandmarks; ++l)
          f[static_cast<size_t>(l)] = {view(l, 0), view(l, 1)};
        evalkit::LandmarkFrame n = evalkit::normalize_landmarks(f);
        py::array_t<double> out({world::kNumLandmarks, 2});
        for (int l = 0; l < world::kNumLandmarks; ++l) {
          out.mutable_at(l, 0) = n[static_cast<size_t>(l)][0];
          out.mutable_at(l, 1) = n[static_cast<size_t>(l)][1];
        }
        return out;
      },
      py::arg("frame"));

  m.def(
      "landmark_metrics",
      [](const py::array_t<double>& pred, const py::array_t<double>& gt) {
        auto lift = [](const py::array_t<double>& seq) {
          if (seq.ndim() != 3 || seq.shape(1) != world::kNumLandmarks || seq.shape(2) != 2)
            throw DimensionError("expected a T x 14 x 2 landmark sequence");
          evalkit::LandmarkSequence out;
          auto view = seq.unchecked<3>();
          for (py::ssize_t t = 0; t < seq.shape(0); ++t) {
            evalkit::LandmarkFrame f;
            for (int l = 0; l < world::kNumLandmarks; ++l)
              f[static_cast<size_t>(l)] = {view(t, l, 0), view(t, l, 1)};
            out.frames.push_back(f);
          }
          return out;
        };
        auto metrics = evalkit::landmark_metrics(lift(pred), lift(gt));
        py::dict out;
        out["m_p"] = metrics.m_p;
        out["m_v"] = metrics.m_v;
        out["f_p"] = metrics.f_p;
        out["f_v"] = metrics.f_v;
        return out;
      },
      py::arg("pred"), py::arg("gt"));

  m.attr("__version__") = "0.1.0";
}
