#include "rpgssm/model_io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "rpgssm/tensor_file.hpp"

namespace rpgssm::model_io {

namespace {

constexpr char kMagic[4] = {'R', 'P', 'G', 'M'};
constexpr std::uint32_t kVersion = 1;

template <typename U>
void put_le(std::ostream& out, U v) {
    unsigned char buf[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U get_le(std::istream& in) {
    unsigned char buf[sizeof(U)];
    if (!in.read(reinterpret_cast<char*>(buf), sizeof(U))) throw IoError("model file: truncated header");
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
    return v;
}

}  // namespace

nlohmann::json spec_to_json(const recognition::RecognitionSpec& spec) {
    return {
        {"architecture", recognition::to_string(spec.architecture)},
        {"hidden", spec.hidden},
        {"activation", recognition::to_string(spec.activation)},
        {"covariance", recognition::to_string(spec.covariance)},
        {"input_dim", spec.input_dim},
        {"latent_dim", spec.latent_dim},
    };
}

recognition::RecognitionSpec spec_from_json(const nlohmann::json& j) {
    recognition::RecognitionSpec s;
    s.architecture = recognition::parse_architecture(j.at("architecture").get<std::string>());
    s.hidden = j.at("hidden").get<std::vector<Eigen::Index>>();
    s.activation = recognition::parse_activation(j.at("activation").get<std::string>());
    s.covariance = recognition::parse_covariance(j.at("covariance").get<std::string>());
    s.input_dim = j.at("input_dim").get<Eigen::Index>();
    s.latent_dim = j.at("latent_dim").get<Eigen::Index>();
    recognition::validate(s);
    return s;
}

void write(std::ostream& out, const trainer::TrainState& state) {
    const auto& rec = state.recognition;
    std::vector<std::pair<std::string, const Matrix*>> sections;
    sections.emplace_back("transition", &state.transition);
    for (std::size_t i = 0; i < rec.params().size(); ++i) {
        sections.emplace_back("recognition/" + rec.names()[i], &rec.params()[i]);
    }
    const std::vector<std::string> adam_names = [&] {
        std::vector<std::string> n;
        for (const auto& name : rec.names()) n.push_back("recognition/" + name);
        n.emplace_back("transition");
        return n;
    }();
    for (std::size_t i = 0; i < state.adam.first.size(); ++i) {
        sections.emplace_back("adam_first/" + adam_names.at(i), &state.adam.first[i]);
        sections.emplace_back("adam_second/" + adam_names.at(i), &state.adam.second[i]);
    }

    std::ostringstream payload;
    nlohmann::json index = nlohmann::json::array();
    for (const auto& [name, m] : sections) {
        const auto offset = static_cast<std::uint64_t>(payload.tellp());
        tensor_file::write(payload, tensor_file::from_matrix(*m));
        const auto end = static_cast<std::uint64_t>(payload.tellp());
        index.push_back({{"name", name}, {"offset", offset}, {"bytes", end - offset}});
    }
    const nlohmann::json manifest = {
        {"format", "rpgssm-model"},
        {"version", kVersion},
        {"recognition", spec_to_json(rec.spec())},
        {"latent_dim", state.transition.rows()},
        {"iteration", state.iteration},
        {"adam_step", state.adam.step},
        {"sections", index},
    };
    const std::string text = manifest.dump(2);
    out.write(kMagic, 4);
    put_le<std::uint32_t>(out, kVersion);
    put_le<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    const std::string bytes = payload.str();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("model file: write failed");
}

trainer::TrainState read(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw IoError("model file: bad magic");
    if (get_le<std::uint32_t>(in) != kVersion) throw IoError("model file: unsupported version");
    const auto length = get_le<std::uint64_t>(in);
    if (length > (1ULL << 30)) throw IoError("model file: implausible manifest length");
    std::string text(length, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(length))) throw IoError("model file: truncated manifest");

    try {
        const nlohmann::json manifest = nlohmann::json::parse(text);
        if (manifest.at("format") != "rpgssm-model") throw IoError("model file: unexpected format tag");
        const recognition::RecognitionSpec spec = spec_from_json(manifest.at("recognition"));

        std::vector<std::string> names;
        std::vector<Matrix> values;
        for (const auto& entry : manifest.at("sections")) {
            names.push_back(entry.at("name").get<std::string>());
            values.push_back(tensor_file::to_matrix(tensor_file::read(in)));
        }
        if (in.peek() != std::char_traits<char>::eof()) throw IoError("model file: trailing bytes after sections");

        auto take = [&](const std::string& name) -> Matrix {
            for (std::size_t i = 0; i < names.size(); ++i) {
                if (names[i] == name) return values[i];
            }
            throw IoError("model file: missing section '" + name + "'");
        };
        const recognition::RecognitionModel reference = recognition::init(spec, 0);
        std::vector<Matrix> params;
        for (const auto& n : reference.names()) params.push_back(take("recognition/" + n));

        trainer::TrainState state;
        state.transition = take("transition");
        state.recognition = recognition::RecognitionModel(spec, reference.names(), std::move(params));
        std::vector<std::string> adam_names;
        for (const auto& n : reference.names()) adam_names.push_back("recognition/" + n);
        adam_names.emplace_back("transition");
        for (const auto& n : adam_names) {
            state.adam.first.push_back(take("adam_first/" + n));
            state.adam.second.push_back(take("adam_second/" + n));
        }
        state.adam.step = manifest.at("adam_step").get<long>();
        state.iteration = manifest.at("iteration").get<long>();
        if (state.transition.rows() != spec.latent_dim || state.transition.cols() != spec.latent_dim) {
            throw IoError("model file: transition matrix does not match the latent dimension");
        }
        return state;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("model file: bad manifest: ") + e.what());
    } catch (const ShapeMismatch& e) {
        throw IoError(std::string("model file: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw IoError(std::string("model file: ") + e.what());
    }
}

void write_file(const std::filesystem::path& path, const trainer::TrainState& state) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    write(out, state);
    out.close();
    if (!out) throw IoError("failed writing " + path.string());
}

trainer::TrainState read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return read(in);
}

}  // namespace rpgssm::model_io
