#include "platoon/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <vector>

namespace platoon::qp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kEps = std::numeric_limits<double>::epsilon();

// Working set of the Goldfarb-Idnani method. J = L^-T Q where H = L L' and
// Q R is the QR factorization of L^-1 N (N = normals of the active set).
// Constraints are handled in the "normal' z >= value" form; equalities are
// stored with id in [0, me), inequalities with id me + i.
class ActiveSet {
 public:
  ActiveSet(const QProblem& qp, const Eigen::MatrixXd& J)
      : qp_(qp),
        n_(qp.variables()),
        me_(qp.Aeq.rows()),
        J_(J),
        R_(Eigen::MatrixXd::Zero(n_, n_)),
        u_(Eigen::VectorXd::Zero(n_ + 1)),
        ids_(static_cast<std::size_t>(n_ + 1), -1),
        d_(n_),
        step_(n_),
        r_(n_ + 1) {}

  Eigen::VectorXd normal(int id) const {
    if (id < me_) {
      return qp_.Aeq.row(id).transpose();
    }
    return -qp_.G.row(id - me_).transpose();
  }

  // d = J' n, primal step z = J2 d2, dual step r = R^-1 d1.
  void directions(const Eigen::VectorXd& np) {
    d_.noalias() = J_.transpose() * np;
    step_.noalias() = J_.rightCols(n_ - q_) * d_.tail(n_ - q_);
    if (q_ > 0) {
      r_.head(q_) = R_.topLeftCorner(q_, q_)
                        .triangularView<Eigen::Upper>()
                        .solve(d_.head(q_));
    }
  }

  // Appends the constraint whose d was last computed. Returns false when its
  // normal is linearly dependent on the active ones (the column is still
  // appended so that the caller can remove it).
  bool add() {
    for (Eigen::Index j = n_ - 1; j >= q_ + 1; --j) {
      double cc = d_(j - 1);
      double ss = d_(j);
      const double h = std::hypot(cc, ss);
      if (h == 0.0) {
        continue;
      }
      d_(j) = 0.0;
      ss /= h;
      cc /= h;
      if (cc < 0.0) {
        cc = -cc;
        ss = -ss;
        d_(j - 1) = -h;
      } else {
        d_(j - 1) = h;
      }
      const double xny = ss / (1.0 + cc);
      for (Eigen::Index k = 0; k < n_; ++k) {
        const double t1 = J_(k, j - 1);
        const double t2 = J_(k, j);
        J_(k, j - 1) = t1 * cc + t2 * ss;
        J_(k, j) = xny * (t1 + J_(k, j - 1)) - t2;
      }
    }
    ++q_;
    R_.col(q_ - 1).head(q_) = d_.head(q_);
    if (std::abs(d_(q_ - 1)) <= kEps * r_norm_) {
      return false;
    }
    r_norm_ = std::max(r_norm_, std::abs(d_(q_ - 1)));
    return true;
  }

  void remove(int id) {
    Eigen::Index qq = -1;
    for (Eigen::Index i = 0; i < q_; ++i) {
      if (ids_[i] == id) {
        qq = i;
        break;
      }
    }
    if (qq < 0) {
      throw std::logic_error("qp: removing a constraint that is not active");
    }
    for (Eigen::Index i = qq; i < q_ - 1; ++i) {
      ids_[i] = ids_[i + 1];
      u_(i) = u_(i + 1);
      R_.col(i) = R_.col(i + 1);
    }
    ids_[q_ - 1] = ids_[q_];
    u_(q_ - 1) = u_(q_);
    ids_[q_] = -1;
    u_(q_) = 0.0;
    R_.col(q_ - 1).head(q_).setZero();
    --q_;
    if (q_ == 0) {
      return;
    }
    for (Eigen::Index j = qq; j < q_; ++j) {
      double cc = R_(j, j);
      double ss = R_(j + 1, j);
      const double h = std::hypot(cc, ss);
      if (h == 0.0) {
        continue;
      }
      cc /= h;
      ss /= h;
      R_(j + 1, j) = 0.0;
      if (cc < 0.0) {
        R_(j, j) = -h;
        cc = -cc;
        ss = -ss;
      } else {
        R_(j, j) = h;
      }
      const double xny = ss / (1.0 + cc);
      for (Eigen::Index k = j + 1; k < q_; ++k) {
        const double t1 = R_(j, k);
        const double t2 = R_(j + 1, k);
        R_(j, k) = t1 * cc + t2 * ss;
        R_(j + 1, k) = xny * (t1 + R_(j, k)) - t2;
      }
      for (Eigen::Index k = 0; k < n_; ++k) {
        const double t1 = J_(k, j);
        const double t2 = J_(k, j + 1);
        J_(k, j) = t1 * cc + t2 * ss;
        J_(k, j + 1) = xny * (J_(k, j) + t1) - t2;
      }
    }
  }

  Eigen::Index size() const { return q_; }
  int id(Eigen::Index pos) const { return ids_[static_cast<std::size_t>(pos)]; }
  void set_id(Eigen::Index pos, int id) { ids_[static_cast<std::size_t>(pos)] = id; }
  double& mult(Eigen::Index pos) { return u_(pos); }
  Eigen::VectorXd& mults() { return u_; }
  const Eigen::VectorXd& step() const { return step_; }
  const Eigen::VectorXd& dual_step() const { return r_; }

  struct Snapshot {
    Eigen::MatrixXd J, R;
    Eigen::VectorXd u;
    std::vector<int> ids;
    Eigen::Index q;
    double r_norm;
  };
  Snapshot save() const { return {J_, R_, u_, ids_, q_, r_norm_}; }
  void restore(const Snapshot& s) {
    J_ = s.J;
    R_ = s.R;
    u_ = s.u;
    ids_ = s.ids;
    q_ = s.q;
    r_norm_ = s.r_norm;
  }

 private:
  const QProblem& qp_;
  Eigen::Index n_;
  Eigen::Index me_;
  Eigen::MatrixXd J_;
  Eigen::MatrixXd R_;
  Eigen::VectorXd u_;
  std::vector<int> ids_;
  Eigen::VectorXd d_;
  Eigen::VectorXd step_;
  Eigen::VectorXd r_;
  Eigen::Index q_ = 0;
  double r_norm_ = 1.0;
};

void write_block(std::ostream& out, const char* name, const Eigen::MatrixXd& m) {
  Eigen::Index nnz = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      nnz += m(i, j) != 0.0;
    }
  }
  out << "%% " << name << "\n" << m.rows() << ' ' << m.cols() << ' ' << nnz
      << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (m(i, j) != 0.0) {
        out << i + 1 << ' ' << j + 1 << ' ' << m(i, j) << '\n';
      }
    }
  }
}

}  // namespace

QProblem QProblem::with_variables(Eigen::Index n) {
  QProblem p;
  p.H = Eigen::MatrixXd::Zero(n, n);
  p.f = Eigen::VectorXd::Zero(n);
  p.G = Eigen::MatrixXd::Zero(0, n);
  p.g = Eigen::VectorXd::Zero(0);
  p.Aeq = Eigen::MatrixXd::Zero(0, n);
  p.beq = Eigen::VectorXd::Zero(0);
  return p;
}

void QProblem::validate() const {
  const Eigen::Index n = H.rows();
  if (H.cols() != n || f.size() != n) {
    throw std::invalid_argument("QProblem: H must be n x n and f of size n");
  }
  if (G.cols() != n || G.rows() != g.size()) {
    throw std::invalid_argument("QProblem: G/g dimensions are inconsistent");
  }
  if (Aeq.cols() != n || Aeq.rows() != beq.size()) {
    throw std::invalid_argument("QProblem: Aeq/beq dimensions are inconsistent");
  }
  if (!H.allFinite() || !f.allFinite() || !G.allFinite() || !g.allFinite() ||
      !Aeq.allFinite() || !beq.allFinite()) {
    throw std::invalid_argument("QProblem: data must be finite");
  }
  const double scale = std::max(1.0, H.cwiseAbs().maxCoeff());
  if ((H - H.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw std::invalid_argument("QProblem: H must be symmetric");
  }
}

std::string to_string(Status status) {
  switch (status) {
    case Status::optimal:
      return "optimal";
    case Status::infeasible:
      return "infeasible";
    case Status::max_iterations:
      return "max_iterations";
  }
  return "unknown";
}

double kkt_residual(const QProblem& qp, const Eigen::VectorXd& z,
                    const Eigen::VectorXd& lambda, const Eigen::VectorXd& mu) {
  double res = (qp.H * z + qp.f + qp.G.transpose() * lambda +
                qp.Aeq.transpose() * mu)
                   .lpNorm<Eigen::Infinity>();
  if (qp.g.size() > 0) {
    const Eigen::VectorXd slack = qp.g - qp.G * z;
    res = std::max(res, (-slack).cwiseMax(0.0).maxCoeff());
    res = std::max(res, (-lambda).cwiseMax(0.0).maxCoeff());
    res = std::max(res, lambda.cwiseProduct(slack).cwiseAbs().maxCoeff());
  }
  if (qp.beq.size() > 0) {
    res = std::max(res, (qp.Aeq * z - qp.beq).lpNorm<Eigen::Infinity>());
  }
  return res;
}

QPSolution solve(const QProblem& qp, const SolverSettings& settings) {
  qp.validate();
  const Eigen::Index n = qp.variables();
  const Eigen::Index me = qp.Aeq.rows();
  const Eigen::Index mi = qp.G.rows();

  Eigen::LLT<Eigen::MatrixXd> llt(qp.H);
  if (llt.info() != Eigen::Success) {
    throw std::invalid_argument("qp::solve: H must be positive definite");
  }
  const Eigen::MatrixXd J = llt.matrixU().solve(
      Eigen::MatrixXd::Identity(n, n));  // L^-T

  QPSolution sol;
  sol.z = llt.solve(-qp.f);
  ActiveSet active(qp, J);

  auto finish = [&](Status status) {
    sol.status = status;
    sol.ineq_duals = Eigen::VectorXd::Zero(mi);
    sol.eq_duals = Eigen::VectorXd::Zero(me);
    for (Eigen::Index k = 0; k < active.size(); ++k) {
      const int id = active.id(k);
      if (id < me) {
        sol.eq_duals(id) = -active.mult(k);
      } else {
        sol.ineq_duals(id - me) = active.mult(k);
      }
    }
    sol.kkt_residual = kkt_residual(qp, sol.z, sol.ineq_duals, sol.eq_duals);
    return sol;
  };

  // Equality constraints: full steps onto each hyperplane.
  for (Eigen::Index i = 0; i < me; ++i) {
    const Eigen::VectorXd np = active.normal(static_cast<int>(i));
    active.directions(np);
    const Eigen::VectorXd& zs = active.step();
    const double gap = qp.beq(i) - np.dot(sol.z);
    const Eigen::Index q = active.size();
    if (zs.squaredNorm() <= kEps) {
      if (std::abs(gap) <= settings.tol) {
        continue;  // redundant row
      }
      return finish(Status::infeasible);
    }
    const double t = gap / zs.dot(np);
    sol.z += t * zs;
    if (q > 0) {
      active.mults().head(q) -= t * active.dual_step().head(q);
    }
    active.mult(q) = t;
    active.set_id(q, static_cast<int>(i));
    if (!active.add()) {
      return finish(Status::infeasible);
    }
  }

  std::vector<char> is_active(static_cast<std::size_t>(mi), 0);
  std::vector<char> excluded(static_cast<std::size_t>(mi), 0);
  Eigen::VectorXd slack(mi);
  const double viol_tol = 1e-3 * settings.tol;

  auto violation_limit = [&](Eigen::Index i) {
    return -viol_tol * std::max(1.0, qp.G.row(i).norm());
  };

  while (true) {
    // Step 1: pick the most violated constraint.
    if (++sol.iterations > settings.max_iter) {
      return finish(Status::max_iterations);
    }
    if (mi > 0) {
      slack = qp.g - qp.G * sol.z;
    }
    std::fill(excluded.begin(), excluded.end(), 0);
    const Eigen::VectorXd z_old = sol.z;
    const ActiveSet::Snapshot saved = active.save();

  select:
    Eigen::Index ip = -1;
    double worst = 0.0;
    for (Eigen::Index i = 0; i < mi; ++i) {
      if (is_active[i] || excluded[i]) {
        continue;
      }
      if (slack(i) < violation_limit(i) && slack(i) < worst) {
        worst = slack(i);
        ip = i;
      }
    }
    if (ip < 0) {
      return finish(Status::optimal);
    }
    const int ip_id = static_cast<int>(me + ip);
    const Eigen::VectorXd np = active.normal(ip_id);
    active.mult(active.size()) = 0.0;
    active.set_id(active.size(), ip_id);
    double s_ip = slack(ip);

    // Step 2: move along the primal/dual directions until ip becomes active.
    while (true) {
      if (++sol.iterations > settings.max_iter) {
        return finish(Status::max_iterations);
      }
      active.directions(np);
      const Eigen::VectorXd& zs = active.step();
      const Eigen::VectorXd& rs = active.dual_step();
      const Eigen::Index q = active.size();

      double t1 = kInf;
      int blocking = -1;
      for (Eigen::Index k = 0; k < q; ++k) {
        if (active.id(k) < me) {
          continue;
        }
        if (rs(k) > 0.0 && active.mult(k) / rs(k) < t1) {
          t1 = active.mult(k) / rs(k);
          blocking = active.id(k);
        }
      }
      double t2 = kInf;
      if (zs.squaredNorm() > kEps) {
        t2 = -s_ip / zs.dot(np);
        if (t2 < 0.0) {
          t2 = kInf;
        }
      }
      const double t = std::min(t1, t2);
      if (t >= kInf) {
        return finish(Status::infeasible);
      }
      if (t2 >= kInf) {
        // Dual step only: drop the blocking constraint.
        if (q > 0) {
          active.mults().head(q) -= t * rs.head(q);
        }
        active.mult(q) += t;
        is_active[blocking - me] = 0;
        active.remove(blocking);
        continue;
      }
      sol.z += t * zs;
      if (q > 0) {
        active.mults().head(q) -= t * rs.head(q);
      }
      active.mult(q) += t;
      if (t == t2) {
        if (!active.add()) {
          active.restore(saved);
          sol.z = z_old;
          for (Eigen::Index i = 0; i < mi; ++i) {
            is_active[i] = 0;
          }
          for (Eigen::Index k = 0; k < active.size(); ++k) {
            if (active.id(k) >= me) {
              is_active[active.id(k) - me] = 1;
            }
          }
          excluded[ip] = 1;
          goto select;
        }
        is_active[ip] = 1;
        break;
      }
      is_active[blocking - me] = 0;
      active.remove(blocking);
      s_ip = qp.g(ip) - qp.G.row(ip).dot(sol.z);
    }
  }
}

void dump(const QProblem& qp, std::ostream& out) {
  out << "%%QProblem variables " << qp.variables() << " inequalities "
      << qp.G.rows() << " equalities " << qp.Aeq.rows() << '\n';
  out.precision(17);
  write_block(out, "H", qp.H);
  write_block(out, "f", qp.f);
  write_block(out, "G", qp.G);
  write_block(out, "g", qp.g);
  write_block(out, "Aeq", qp.Aeq);
  write_block(out, "beq", qp.beq);
}

Prediction condense(std::span<const dynamics::DiscreteModel> models,
                    int horizon, const Eigen::VectorXd& x0,
                    const Eigen::MatrixXd& preview) {
  if (horizon < 1) {
    throw std::invalid_argument("condense: horizon must be >= 1");
  }
  if (models.empty() ||
      (models.size() != 1 && models.size() != static_cast<std::size_t>(horizon))) {
    throw std::invalid_argument("condense: need one model or one per step");
  }
  const auto& first = models.front();
  const Eigen::Index n = first.A.rows();
  const Eigen::Index m = first.B.cols();
  const Eigen::Index nw = first.E.cols();
  if (x0.size() != n) {
    throw std::invalid_argument("condense: initial state has wrong size");
  }
  if (nw > 0 && (preview.rows() != nw || preview.cols() < horizon)) {
    throw std::invalid_argument("condense: preview must be nw x horizon");
  }

  Prediction pred;
  pred.states = n;
  pred.inputs = m;
  pred.horizon = horizon;
  pred.free = Eigen::VectorXd::Zero((horizon + 1) * n);
  pred.gamma = Eigen::MatrixXd::Zero((horizon + 1) * n, horizon * m);
  pred.free.head(n) = x0;
  for (int k = 0; k < horizon; ++k) {
    const auto& mk = models.size() == 1 ? first : models[static_cast<std::size_t>(k)];
    const auto cur = pred.free.segment(k * n, n);
    Eigen::VectorXd next = mk.A * cur + mk.offset;
    if (nw > 0) {
      next += mk.E * preview.col(k);
    }
    pred.free.segment((k + 1) * n, n) = next;
    pred.gamma.block((k + 1) * n, 0, n, horizon * m) =
        mk.A * pred.gamma.block(k * n, 0, n, horizon * m);
    pred.gamma.block((k + 1) * n, k * m, n, m) += mk.B;
  }
  return pred;
}

}  // namespace platoon::qp
