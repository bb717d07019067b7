#include "touchfuse/sim/arm.hpp"

#include <algorithm>
#include <cmath>

namespace touchfuse::sim {

namespace {

void check_q(const char* op, std::size_t dof, const std::vector<double>& q) {
  if (q.size() != dof)
    throw std::invalid_argument(std::string(op) + ": expected " +
                                std::to_string(dof) + " joints, got " +
                                std::to_string(q.size()));
  for (double v : q)
    if (!std::isfinite(v))
      throw std::invalid_argument(std::string(op) + ": non-finite joint state");
}

}  // namespace

ArmModel::ArmModel(std::vector<LinkParams> links, Vec2 base, double gravity_y)
    : links_(std::move(links)), base_(base), gravity_y_(gravity_y) {
  if (links_.empty()) throw std::invalid_argument("ArmModel: no links");
  for (LinkParams& l : links_) {
    if (l.length <= 0.0 || l.mass <= 0.0)
      throw std::invalid_argument("ArmModel: lengths and masses must be positive");
    if (l.inertia <= 0.0) l.inertia = l.mass * l.length * l.length / 12.0;
  }
}

ArmModel::Frames ArmModel::forward_kinematics(const std::vector<double>& q) const {
  check_q("forward_kinematics", dof(), q);
  Frames f;
  f.joint_pos.resize(dof() + 1);
  f.theta.resize(dof());
  f.joint_pos[0] = base_;
  double theta = 0.0;
  for (std::size_t i = 0; i < dof(); ++i) {
    theta += q[i];
    f.theta[i] = theta;
    f.joint_pos[i + 1] =
        f.joint_pos[i] + Vec2{std::cos(theta), std::sin(theta)} * links_[i].length;
  }
  f.ee = {f.joint_pos.back().x, f.joint_pos.back().y, theta};
  return f;
}

Mat ArmModel::jacobian(const std::vector<double>& q) const {
  check_q("jacobian", dof(), q);
  const Frames f = forward_kinematics(q);
  Mat j(3, dof());
  const Vec2 ee = f.joint_pos.back();
  for (std::size_t i = 0; i < dof(); ++i) {
    const Vec2 r = ee - f.joint_pos[i];
    j(0, i) = -r.y;
    j(1, i) = r.x;
    j(2, i) = 1.0;
  }
  return j;
}

Vec3 ArmModel::jdot_qdot(const std::vector<double>& q,
                         const std::vector<double>& qd) const {
  check_q("jdot_qdot", dof(), q);
  check_q("jdot_qdot", dof(), qd);
  const Frames f = forward_kinematics(q);
  // joint-origin velocities
  std::vector<Vec2> v(dof() + 1, Vec2{0.0, 0.0});
  double omega = 0.0;
  for (std::size_t i = 0; i < dof(); ++i) {
    omega += qd[i];
    const Vec2 r = f.joint_pos[i + 1] - f.joint_pos[i];
    v[i + 1] = v[i] + r.perp() * omega;
  }
  const Vec2 vee = v.back();
  Vec3 out = {0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < dof(); ++i) {
    const Vec2 rdot = vee - v[i];
    out[0] += qd[i] * (-rdot.y);
    out[1] += qd[i] * rdot.x;
  }
  return out;
}

std::vector<double> ArmModel::rnea(const std::vector<double>& q,
                                   const std::vector<double>& qd,
                                   const std::vector<double>& qdd,
                                   bool with_gravity) const {
  check_q("rnea", dof(), q);
  check_q("rnea", dof(), qd);
  check_q("rnea", dof(), qdd);
  const std::size_t n = dof();
  const Frames f = forward_kinematics(q);

  // Forward pass: angular rates, joint-origin and COM accelerations.
  // Gravity enters as a fictitious base acceleration.
  std::vector<double> omega(n), omegad(n);
  std::vector<Vec2> a_joint(n + 1), a_com(n);
  a_joint[0] = {0.0, with_gravity ? -gravity_y_ : 0.0};
  double w = 0.0, wd = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    w += qd[i];
    wd += qdd[i];
    omega[i] = w;
    omegad[i] = wd;
    const Vec2 r = f.joint_pos[i + 1] - f.joint_pos[i];
    a_joint[i + 1] = a_joint[i] + r.perp() * wd - r * (w * w);
    const Vec2 rc = r * 0.5;
    a_com[i] = a_joint[i] + rc.perp() * wd - rc * (w * w);
  }

  // Backward pass: forces and moments at each joint.
  std::vector<double> tau(n, 0.0);
  Vec2 f_child{0.0, 0.0};
  double n_child = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const Vec2 r = f.joint_pos[i + 1] - f.joint_pos[i];
    const Vec2 rc = r * 0.5;
    const Vec2 fi = f_child + a_com[i] * links_[i].mass;
    const double ni = n_child + links_[i].inertia * omegad[i] +
                      rc.cross(a_com[i] * links_[i].mass) + r.cross(f_child);
    tau[i] = ni;
    f_child = fi;
    n_child = ni;
  }
  return tau;
}

Mat ArmModel::mass_matrix(const std::vector<double>& q) const {
  const std::size_t n = dof();
  std::vector<double> zero(n, 0.0), e(n, 0.0);
  Mat m(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    e[j] = 1.0;
    const std::vector<double> col = rnea(q, zero, e, /*with_gravity=*/false);
    for (std::size_t i = 0; i < n; ++i) m(i, j) = col[i];
    e[j] = 0.0;
  }
  return m;
}

std::vector<double> ArmModel::bias_forces(const std::vector<double>& q,
                                          const std::vector<double>& qd) const {
  const std::vector<double> zero(dof(), 0.0);
  return rnea(q, qd, zero, /*with_gravity=*/true);
}

double ArmModel::kinetic_energy(const std::vector<double>& q,
                                const std::vector<double>& qd) const {
  const Mat m = mass_matrix(q);
  const std::vector<double> mq = m * qd;
  double e = 0.0;
  for (std::size_t i = 0; i < dof(); ++i) e += 0.5 * qd[i] * mq[i];
  return e;
}

bool ArmModel::inverse_kinematics(const Pose& target, bool elbow_up,
                                  std::vector<double>& q_out) const {
  if (dof() != 3)
    throw std::logic_error("inverse_kinematics: implemented for 3-link arms");
  const double l1 = links_[0].length, l2 = links_[1].length, l3 = links_[2].length;
  // wrist = EE origin pulled back along the EE direction
  const Vec2 wrist = Vec2{target.x, target.y} -
                     Vec2{std::cos(target.alpha), std::sin(target.alpha)} * l3;
  const Vec2 rel = wrist - base_;
  const double d2 = rel.dot(rel);
  const double reach = l1 + l2;
  if (d2 > reach * reach || d2 < (l1 - l2) * (l1 - l2)) return false;
  const double cos_q2 = (d2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
  const double c = std::clamp(cos_q2, -1.0, 1.0);
  const double q2 = elbow_up ? -std::acos(c) : std::acos(c);
  const double k1 = l1 + l2 * std::cos(q2);
  const double k2 = l2 * std::sin(q2);
  const double q1 = std::atan2(rel.y, rel.x) - std::atan2(k2, k1);
  const double q3 = wrap_angle(target.alpha - q1 - q2);
  q_out = {wrap_angle(q1), wrap_angle(q2), q3};
  return true;
}

// ---- small SPD helpers -------------------------------------------------------

std::vector<double> spd_solve(const Mat& a, const std::vector<double>& b) {
  const std::size_t n = a.rows();
  Mat l(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      if (i == j) {
        if (s <= 0.0) throw std::runtime_error("spd_solve: matrix not positive definite");
        l(i, i) = std::sqrt(s);
      } else {
        l(i, j) = s / l(j, j);
      }
    }
  }
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * y[k];
    y[i] = s / l(i, i);
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = y[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= l(k, i) * x[k];
    x[i] = s / l(i, i);
  }
  return x;
}

Mat spd_inverse(const Mat& a) {
  const std::size_t n = a.rows();
  Mat inv(n, n);
  std::vector<double> e(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    e[j] = 1.0;
    const std::vector<double> col = spd_solve(a, e);
    for (std::size_t i = 0; i < n; ++i) inv(i, j) = col[i];
    e[j] = 0.0;
  }
  return inv;
}

bool is_spd(const Mat& a) {
  try {
    std::vector<double> e(a.rows(), 1.0);
    spd_solve(a, e);
    return true;
  } catch (const std::runtime_error&) {
    return false;
  }
}

double symmetric3_min_eigenvalue(const Mat& a) {
  // Closed-form eigenvalues of a symmetric 3x3 matrix.
  const double p1 = a(0, 1) * a(0, 1) + a(0, 2) * a(0, 2) + a(1, 2) * a(1, 2);
  const double tr = a(0, 0) + a(1, 1) + a(2, 2);
  if (p1 == 0.0) return std::min({a(0, 0), a(1, 1), a(2, 2)});
  const double qm = tr / 3.0;
  const double p2 = (a(0, 0) - qm) * (a(0, 0) - qm) + (a(1, 1) - qm) * (a(1, 1) - qm) +
                    (a(2, 2) - qm) * (a(2, 2) - qm) + 2.0 * p1;
  const double p = std::sqrt(p2 / 6.0);
  Mat b(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) b(i, j) = (a(i, j) - (i == j ? qm : 0.0)) / p;
  const double detb =
      b(0, 0) * (b(1, 1) * b(2, 2) - b(1, 2) * b(2, 1)) -
      b(0, 1) * (b(1, 0) * b(2, 2) - b(1, 2) * b(2, 0)) +
      b(0, 2) * (b(1, 0) * b(2, 1) - b(1, 1) * b(2, 0));
  const double r = std::clamp(detb / 2.0, -1.0, 1.0);
  const double phi = std::acos(r) / 3.0;
  // eigenvalues qm + 2p cos(phi + 2k pi/3); k=1 gives the smallest
  return qm + 2.0 * p * std::cos(phi + 2.0 * 3.14159265358979323846 / 3.0);
}

}  // namespace touchfuse::sim
