#include <fstream>
#include <sstream>

#include <json.hpp>

#include "rowflip/errors.hpp"
#include "rowflip/image.hpp"

namespace rf::image {

std::string chain_to_jsonl(const std::vector<ChainRecord>& chain) {
    std::string out;
    for (const auto& r : chain) {
        nlohmann::ordered_json j;
        j["page"] = r.bit.page;
        j["bop"] = r.bit.bop;
        j["mode"] = r.bit.mode;
        j["expected_acc"] = r.expected_acc;
        if (r.file_page > 0) j["file_page"] = r.file_page;
        out += j.dump();
        out += '\n';
    }
    return out;
}

std::vector<ChainRecord> chain_from_jsonl(const std::string& text) {
    std::vector<ChainRecord> chain;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            ChainRecord r;
            r.bit.page = j.at("page").get<int>();
            r.bit.bop = j.at("bop").get<int>();
            r.bit.mode = j.at("mode").get<int>();
            r.expected_acc = j.value("expected_acc", 0.0);
            r.file_page = j.value("file_page", 0);
            if (r.bit.page < 1 || r.bit.bop < 0 || r.bit.bop >= kPageBits || (r.bit.mode != 0 && r.bit.mode != 1))
                throw FormatError("field out of range");
            chain.push_back(r);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("chain line " + std::to_string(lineno) + ": " + e.what());
        } catch (const FormatError& e) {
            throw FormatError("chain line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return chain;
}

void write_chain(const std::string& path, const std::vector<ChainRecord>& chain) {
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot write chain file: " + path);
    f << chain_to_jsonl(chain);
}

std::vector<ChainRecord> read_chain(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open chain file: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return chain_from_jsonl(ss.str());
}

}  // namespace rf::image
