#include "cfld/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "numkit/tensor.hpp"

namespace cfld {

namespace {

struct Key {
    std::string name;
    std::function<std::string(const Config&)> get;
    std::function<void(Config&, const std::string&)> set;
};

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    std::istringstream is(value);
    T out;
    is >> out;
    if (is.fail() || !is.eof()) {
        throw std::invalid_argument("config: bad value '" + value + "' for key '" + key + "'");
    }
    return out;
}

template <std::size_t N>
std::string join_array(const std::array<int, N>& a) {
    std::ostringstream os;
    for (std::size_t i = 0; i < N; ++i) {
        if (i) os << ',';
        os << a[i];
    }
    return os.str();
}

template <std::size_t N>
std::array<int, N> parse_array(const std::string& key, const std::string& value) {
    std::array<int, N> out{};
    std::istringstream is(value);
    std::string item;
    std::size_t i = 0;
    while (std::getline(is, item, ',')) {
        if (i >= N) break;
        out[i++] = parse_number<int>(key, item);
    }
    if (i != N || !is.eof()) {
        throw std::invalid_argument("config: key '" + key + "' needs " + std::to_string(N) +
                                    " comma-separated integers, got '" + value + "'");
    }
    return out;
}

#define NUM_KEY(field)                                                      \
    Key {                                                                   \
        #field, [](const Config& c) {                                       \
            std::ostringstream os;                                          \
            os << c.field;                                                  \
            return os.str();                                                \
        },                                                                  \
        [](Config& c, const std::string& v) {                               \
            c.field = parse_number<decltype(c.field)>(#field, v);           \
        }                                                                   \
    }

#define ARR_KEY(field, n)                                                   \
    Key {                                                                   \
        #field, [](const Config& c) { return join_array(c.field); },        \
        [](Config& c, const std::string& v) {                               \
            c.field = parse_array<n>(#field, v);                            \
        }                                                                   \
    }

const std::vector<Key>& registry() {
    static const std::vector<Key> keys = {
        NUM_KEY(image_size),
        NUM_KEY(train_pairs),
        NUM_KEY(test_pairs),
        NUM_KEY(codec_images),
        NUM_KEY(latent_channels),
        NUM_KEY(codec_channels),
        ARR_KEY(enc_channels, 4),
        NUM_KEY(prompt_dim),
        NUM_KEY(prompt_queries),
        NUM_KEY(prd_blocks),
        NUM_KEY(hga_layers),
        NUM_KEY(attn_heads),
        ARR_KEY(unet_channels, 3),
        NUM_KEY(temb_dim),
        NUM_KEY(gn_groups),
        NUM_KEY(diffusion_steps),
        NUM_KEY(beta_start),
        NUM_KEY(beta_end),
        NUM_KEY(ddim_steps),
        NUM_KEY(lr),
        NUM_KEY(warmup_steps),
        NUM_KEY(milestone_step),
        NUM_KEY(batch_size),
        NUM_KEY(eta_drop_percent),
        NUM_KEY(codec_steps),
        NUM_KEY(backbone_steps),
        NUM_KEY(train_steps),
        NUM_KEY(checkpoint_every),
        NUM_KEY(independent_drop),
        NUM_KEY(seed),
        NUM_KEY(w_pose),
        NUM_KEY(w_app),
    };
    return keys;
}

#undef NUM_KEY
#undef ARR_KEY

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

}  // namespace

void Config::set(const std::string& key, const std::string& value) {
    for (const Key& k : registry()) {
        if (k.name == key) {
            k.set(*this, value);
            return;
        }
    }
    throw std::invalid_argument("config: unknown key '" + key + "'");
}

void Config::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("config: " + path + ":" + std::to_string(lineno) +
                                        ": expected key=value, got '" + line + "'");
        }
        set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

std::string Config::dump() const {
    std::ostringstream os;
    for (const Key& k : registry()) os << k.name << '=' << k.get(*this) << '\n';
    return os.str();
}

void Config::validate() const {
    numkit::check(image_size >= 32 && image_size % 16 == 0,
                  "config: image_size must be a multiple of 16 and >= 32");
    numkit::check(eta_drop_percent >= 0 && eta_drop_percent <= 100,
                  "config: eta_drop_percent must lie in [0,100]");
    numkit::check(diffusion_steps >= 1, "config: diffusion_steps must be >= 1");
    numkit::check(ddim_steps >= 1 && ddim_steps <= diffusion_steps,
                  "config: ddim_steps must lie in [1, diffusion_steps]");
    numkit::check(prompt_dim % attn_heads == 0, "config: prompt_dim must divide by attn_heads");
    for (int ch : unet_channels) {
        numkit::check(ch % gn_groups == 0 && ch % attn_heads == 0,
                      "config: unet_channels must divide by gn_groups and attn_heads");
    }
    numkit::check(batch_size >= 1, "config: batch_size must be >= 1");
    numkit::check(train_pairs >= 1, "config: train_pairs must be >= 1");
}

}  // namespace cfld
