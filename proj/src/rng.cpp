#include "cyclevol/rng.hpp"

#include <cmath>
#include <numbers>
#include <cstdlib>
#include <sstream>

#include "cyclevol/errors.hpp"

namespace cyclevol {

// Box-Muller, caching the second variate.
double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

std::string Rng::state() const {
    std::ostringstream out;
    out << engine_ << ' ' << has_spare_ << ' ' << std::hexfloat << spare_;
    return out.str();
}

Rng Rng::from_state(const std::string& text) {
    Rng rng;
    std::istringstream in(text);
    std::string spare;
    in >> rng.engine_ >> rng.has_spare_ >> spare;
    if (in.fail()) throw FormatError("malformed generator state");
    rng.spare_ = std::strtod(spare.c_str(), nullptr);
    return rng;
}

}  // namespace cyclevol
