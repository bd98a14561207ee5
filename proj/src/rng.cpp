#include "voxfuse/rng.hpp"

#include <cstring>
#include <sstream>

namespace voxfuse {

std::string Rng::save_state() const {
    std::ostringstream ss;
    ss << gen_ << " " << (have_spare_ ? 1 : 0) << " ";
    // spare cached normal, bit-exact via its integer image
    uint64_t bits;
    static_assert(sizeof bits == sizeof spare_);
    std::memcpy(&bits, &spare_, sizeof bits);
    ss << bits;
    return ss.str();
}

void Rng::load_state(const std::string& s) {
    std::istringstream ss(s);
    int flag = 0;
    uint64_t bits = 0;
    ss >> gen_ >> flag >> bits;
    have_spare_ = flag != 0;
    std::memcpy(&spare_, &bits, sizeof spare_);
}

} // namespace voxfuse
