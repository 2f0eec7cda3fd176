#include "dns/smoothing_io.hpp"

#include "dns/errors.hpp"

namespace dns {

Container smoothing_results_to_container(const std::vector<SmoothingResult>& results,
                                         nlohmann::json meta) {
  require(!results.empty(), "no smoothing results to store");
  const auto m = static_cast<std::uint64_t>(results.front().posteriors.front().dim());
  bool has_priors = true;
  std::uint64_t rows = 0;
  std::vector<double> lengths;
  for (const auto& r : results) {
    require(r.length() >= 1, "empty smoothing result");
    require(static_cast<std::uint64_t>(r.posteriors.front().dim()) == m,
            "smoothing results have mixed state dimensions");
    has_priors = has_priors && r.priors.size() == r.length();
    rows += r.length();
    lengths.push_back(static_cast<double>(r.length()));
  }
  std::vector<double> prior_mean, prior_var, post_mean, post_cov;
  prior_mean.reserve(rows * m);
  post_cov.reserve(rows * m * m);
  for (const auto& r : results) {
    for (std::size_t t = 0; t < r.length(); ++t) {
      const auto& p = r.posteriors[t];
      for (Eigen::Index i = 0; i < p.mean.size(); ++i) post_mean.push_back(p.mean(i));
      for (Eigen::Index i = 0; i < p.cov.rows(); ++i) {
        for (Eigen::Index j = 0; j < p.cov.cols(); ++j) post_cov.push_back(p.cov(i, j));
      }
      if (has_priors) {
        for (Eigen::Index i = 0; i < r.priors[t].mean.size(); ++i) {
          prior_mean.push_back(r.priors[t].mean(i));
          prior_var.push_back(r.priors[t].var_diag(i));
        }
      }
    }
  }
  Container c;
  c.meta = std::move(meta);
  c.meta["kind"] = "smoothing-results";
  c.meta["format_version"] = kSmoothingDumpFormatVersion;
  c.meta["num_sequences"] = results.size();
  c.meta["state_dim"] = m;
  c.meta["has_priors"] = has_priors;
  c.add("lengths", {results.size()}, std::move(lengths));
  c.add("posterior_mean", {rows, m}, std::move(post_mean));
  c.add("posterior_cov", {rows, m * m}, std::move(post_cov));
  if (has_priors) {
    c.add("prior_mean", {rows, m}, std::move(prior_mean));
    c.add("prior_var", {rows, m}, std::move(prior_var));
  }
  return c;
}

std::vector<SmoothingResult> smoothing_results_from_container(const Container& c) {
  if (c.meta.value("kind", "") != "smoothing-results") {
    throw FormatError("file is not a smoothing-results dump");
  }
  if (c.meta.value("format_version", 0) != kSmoothingDumpFormatVersion) {
    throw FormatError("unsupported smoothing-results format version");
  }
  const auto m = c.meta.at("state_dim").get<std::size_t>();
  const bool has_priors = c.meta.value("has_priors", false);
  const auto& lengths = c.at("lengths").values;
  const auto& pm = c.at("posterior_mean").values;
  const auto& pc = c.at("posterior_cov").values;
  std::size_t total = 0;
  for (double len : lengths) total += static_cast<std::size_t>(len);
  if (pm.size() != total * m || pc.size() != total * m * m) {
    throw FormatError("smoothing-results arrays do not match the declared lengths");
  }
  const std::vector<double>* prm = nullptr;
  const std::vector<double>* prv = nullptr;
  if (has_priors) {
    prm = &c.at("prior_mean").values;
    prv = &c.at("prior_var").values;
    if (prm->size() != total * m || prv->size() != total * m) {
      throw FormatError("prior arrays do not match the declared lengths");
    }
  }
  const auto dim = static_cast<Eigen::Index>(m);
  std::vector<SmoothingResult> out;
  std::size_t row = 0;
  for (double len : lengths) {
    const auto T = static_cast<std::size_t>(len);
    SmoothingResult r;
    r.point_estimates.resize(static_cast<Eigen::Index>(T), dim);
    for (std::size_t t = 0; t < T; ++t, ++row) {
      GaussianBelief b;
      b.mean = Eigen::Map<const Vec>(pm.data() + row * m, dim);
      b.cov = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
          pc.data() + row * m * m, dim, dim);
      r.point_estimates.row(static_cast<Eigen::Index>(t)) = b.mean.transpose();
      r.posteriors.push_back(std::move(b));
      if (has_priors) {
        r.priors.push_back({Eigen::Map<const Vec>(prm->data() + row * m, dim),
                            Eigen::Map<const Vec>(prv->data() + row * m, dim)});
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

void write_smoothing_results(const std::filesystem::path& path,
                             const std::vector<SmoothingResult>& results, nlohmann::json meta) {
  write_container(path, smoothing_results_to_container(results, std::move(meta)));
}

std::vector<SmoothingResult> read_smoothing_results(const std::filesystem::path& path) {
  return smoothing_results_from_container(read_container(path));
}

}  // namespace dns
