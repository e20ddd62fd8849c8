#include "uavxai/channel.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>

namespace uavxai {

bool ChannelParams::valid() const {
  return carrier_freq > 0 && bandwidth > 0 && noise_power > 0 && eta_los_db > 0 &&
         eta_nlos_db > 0 && los_a > 0 && los_b > 0 && p_max > 0 && qos_rate >= 0;
}

double PowerAllocation::total_served_power() const {
  return (power.array() * served.cast<double>().array()).sum();
}

bool PowerAllocation::valid(double p_max, double tol) const {
  if (power.size() != served.size()) return false;
  for (int k = 0; k < users(); ++k) {
    if (power[k] < 0.0) return false;
    if (served[k] != 0 && served[k] != 1) return false;
    if (served[k] == 0 && power[k] != 0.0) return false;
  }
  return total_served_power() <= p_max * (1.0 + tol);
}

double los_probability(double elevation_deg, const ChannelParams& params) {
  if (!(elevation_deg >= 0.0 && elevation_deg <= 90.0)) {
    throw std::domain_error("elevation angle must lie in [0, 90] degrees");
  }
  return 1.0 / (1.0 + params.los_a * std::exp(-params.los_b * (elevation_deg - params.los_a)));
}

double free_space_loss_db(double distance, double carrier_freq) {
  return 20.0 * std::log10(4.0 * kPi * carrier_freq * distance / kSpeedOfLight);
}

double mean_path_loss(double distance, double elevation_deg, const ChannelParams& params) {
  if (!(distance > 0.0)) throw std::invalid_argument("path loss needs a positive distance");
  const double fspl = free_space_loss_db(distance, params.carrier_freq);
  const double p_los = los_probability(elevation_deg, params);
  return p_los * (fspl + params.eta_los_db) + (1.0 - p_los) * (fspl + params.eta_nlos_db);
}

LinkReport sinr_and_rates(const Eigen::VectorXd& gains, const PowerAllocation& alloc,
                          const ChannelParams& params) {
  const Eigen::Index k_users = gains.size();
  if (alloc.power.size() != k_users || alloc.served.size() != k_users) {
    throw std::invalid_argument("gain and allocation sizes differ");
  }
  const Eigen::ArrayXd received =
      alloc.served.cast<double>().array() * gains.array() * alloc.power.array();

  LinkReport report;
  report.users.resize(static_cast<size_t>(k_users));
  for (Eigen::Index k = 0; k < k_users; ++k) {
    auto& link = report.users[static_cast<size_t>(k)];
    link.gain = gains[k];
    if (alloc.served[k] == 0) continue;
    // Subtracting from the total would lose precision when one user dominates.
    double interference = 0.0;
    for (Eigen::Index i = 0; i < k_users; ++i) {
      if (i != k) interference += received[i];
    }
    link.sinr = received[k] / (interference + params.noise_power);
    link.rate = params.bandwidth * std::log2(1.0 + link.sinr);
    report.system_rate += link.rate;
  }
  return report;
}

int qos_violations(const LinkReport& report, const PowerAllocation& alloc, double qos_rate) {
  int count = 0;
  for (size_t k = 0; k < report.users.size(); ++k) {
    if (alloc.served[static_cast<Eigen::Index>(k)] == 1 && report.users[k].rate < qos_rate) ++count;
  }
  return count;
}

double episode_throughput(std::span<const LinkReport> reports) {
  double total = 0.0;
  for (const auto& r : reports) total += r.system_rate;
  return total;
}

Eigen::VectorXd draw_fading(const ChannelParams& params, int users, std::mt19937_64& rng) {
  Eigen::VectorXd h = Eigen::VectorXd::Ones(users);
  if (params.fading == FadingMode::rayleigh) {
    std::exponential_distribution<double> power(1.0);
    for (int k = 0; k < users; ++k) h[k] = power(rng);
  }
  return h;
}

Eigen::VectorXd user_gains(const UavPose& pose, std::span<const UserState> users,
                           const ChannelParams& params, const Eigen::VectorXd& fading) {
  Eigen::VectorXd g(static_cast<Eigen::Index>(users.size()));
  for (size_t k = 0; k < users.size(); ++k) {
    const double loss =
        mean_path_loss(distance_to_user(pose, users[k]), elevation_deg(pose, users[k]), params);
    g[static_cast<Eigen::Index>(k)] = channel_gain(loss, fading[static_cast<Eigen::Index>(k)]);
  }
  return g;
}

LinkReport evaluate_links(const UavPose& pose, std::span<const UserState> users,
                          const PowerAllocation& alloc, const ChannelParams& params,
                          const Eigen::VectorXd& fading) {
  const Eigen::VectorXd gains = user_gains(pose, users, params, fading);
  LinkReport report = sinr_and_rates(gains, alloc, params);
  for (size_t k = 0; k < users.size(); ++k) {
    report.users[k].distance = distance_to_user(pose, users[k]);
    report.users[k].path_loss_db =
        mean_path_loss(report.users[k].distance, elevation_deg(pose, users[k]), params);
  }
  return report;
}

void write_link_csv_header(std::ostream& os) {
  os << "episode,step,user,distance_m,path_loss_db,gain,sinr,rate_bps\n";
}

void write_link_csv(std::ostream& os, int episode, int step, const LinkReport& report) {
  for (size_t k = 0; k < report.users.size(); ++k) {
    const auto& u = report.users[k];
    os << episode << ',' << step << ',' << k << ',' << u.distance << ',' << u.path_loss_db << ','
       << u.gain << ',' << u.sinr << ',' << u.rate << '\n';
  }
}

}  // namespace uavxai
