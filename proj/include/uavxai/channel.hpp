#pragma once

#include "uavxai/world.hpp"

#include <Eigen/Core>

#include <cmath>
#include <iosfwd>
#include <random>
#include <span>
#include <vector>

namespace uavxai {

inline constexpr double kSpeedOfLight = 3e8;

enum class FadingMode { deterministic_unit, rayleigh };

/// Air-to-ground link constants. The LoS probability follows the
/// elevation sigmoid 1 / (1 + a exp(-b (theta - a))).
struct ChannelParams {
  double carrier_freq = 2e9;    // Hz
  double bandwidth = 1e6;       // Hz
  double noise_power = 1e-13;   // W
  double eta_los_db = 1.0;
  double eta_nlos_db = 20.0;
  double los_a = 9.61;
  double los_b = 0.16;
  double p_max = 1.0;           // W
  double qos_rate = 1e5;        // bit/s
  FadingMode fading = FadingMode::deterministic_unit;

  bool valid() const;
};

/// Per-user transmit powers and service flags. `served[k]` is 0 or 1 and
/// an unserved user always has zero power.
struct PowerAllocation {
  Eigen::VectorXd power;
  Eigen::VectorXi served;

  int users() const { return static_cast<int>(power.size()); }
  double total_served_power() const;
  bool valid(double p_max, double tol = 1e-12) const;
};

struct UserLink {
  double distance = 0.0;
  double path_loss_db = 0.0;
  double gain = 0.0;
  double sinr = 0.0;
  double rate = 0.0;
};

struct LinkReport {
  std::vector<UserLink> users;
  double system_rate = 0.0;
};

double los_probability(double elevation_deg, const ChannelParams& params);

double free_space_loss_db(double distance, double carrier_freq);

/// LoS/NLoS mixture of free-space loss plus excess loss, in dB.
double mean_path_loss(double distance, double elevation_deg, const ChannelParams& params);

inline double channel_gain(double path_loss_db, double fading) {
  return fading * std::pow(10.0, -path_loss_db / 10.0);
}

/// SINR and Shannon rate for every user; interference is the received power
/// of every other served user.
LinkReport sinr_and_rates(const Eigen::VectorXd& gains, const PowerAllocation& alloc,
                          const ChannelParams& params);

int qos_violations(const LinkReport& report, const PowerAllocation& alloc, double qos_rate);

double episode_throughput(std::span<const LinkReport> reports);

/// Small-scale fading draws: all ones, or unit-mean exponential power gains.
Eigen::VectorXd draw_fading(const ChannelParams& params, int users, std::mt19937_64& rng);

/// Geometry-aware gains for every user at the given pose.
Eigen::VectorXd user_gains(const UavPose& pose, std::span<const UserState> users,
                           const ChannelParams& params, const Eigen::VectorXd& fading);

/// Full link evaluation including the per-user distance and path loss columns.
LinkReport evaluate_links(const UavPose& pose, std::span<const UserState> users,
                          const PowerAllocation& alloc, const ChannelParams& params,
                          const Eigen::VectorXd& fading);

void write_link_csv_header(std::ostream& os);
void write_link_csv(std::ostream& os, int episode, int step, const LinkReport& report);

}  // namespace uavxai
