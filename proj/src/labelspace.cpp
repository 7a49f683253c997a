#include "uqseg/labelspace.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "uqseg/error.hpp"

namespace uqseg {

bool LabelSchema::has_label(uint16_t id) const {
    if (id == 0) return true;  // background is always valid
    return std::any_of(entries.begin(), entries.end(),
                       [id](const LabelEntry& e) { return e.id == id; });
}

bool LabelSchema::has_group(const std::string& name) const {
    return std::any_of(groups.begin(), groups.end(),
                       [&](const RegionGroup& g) { return g.name == name; });
}

uint16_t LabelSchema::max_label() const {
    uint16_t m = 0;
    for (const auto& e : entries) m = std::max(m, e.id);
    return m;
}

void LabelSchema::validate() const {
    std::set<uint16_t> seen;
    for (const auto& e : entries) {
        require(e.id != 0, ErrKind::schema, "schema '" + schema_id + "': label 0 is reserved for background");
        require(seen.insert(e.id).second, ErrKind::schema,
                "schema '" + schema_id + "': duplicate label id " + std::to_string(e.id));
    }
    std::set<std::string> group_names;
    for (const auto& g : groups) {
        require(!g.members.empty(), ErrKind::schema,
                "schema '" + schema_id + "': group '" + g.name + "' is empty");
        require(group_names.insert(g.name).second, ErrKind::schema,
                "schema '" + schema_id + "': duplicate group '" + g.name + "'");
        for (uint16_t id : g.members) {
            require(id != 0, ErrKind::schema,
                    "schema '" + schema_id + "': group '" + g.name + "' contains background");
            require(seen.count(id) != 0, ErrKind::schema,
                    "schema '" + schema_id + "': group '" + g.name + "' references unknown label " +
                        std::to_string(id));
        }
    }
}

namespace {

std::vector<uint16_t> id_range(uint16_t first, uint16_t last) {
    std::vector<uint16_t> ids;
    for (uint16_t id = first; id <= last; ++id) ids.push_back(id);
    return ids;
}

}  // namespace

LabelSchema builtin_schema(SchemaKind kind) {
    if (kind == SchemaKind::CM) {
        LabelSchema s;
        s.schema_id = "cm";
        s.entries = {{1, "necrotic_core"}, {2, "edema"}, {3, "enhancing_tumor"}};
        s.groups = {
            {"whole_tumor", {1, 2, 3}},
            {"tumor_core", {1, 3}},
            {"enhancing_tumor", {3}},
        };
        s.validate();
        return s;
    }
    return make_um_schema(31, 22);
}

LabelSchema make_um_schema(int cortical_count, int subcortical_count) {
    require(cortical_count >= 1 && subcortical_count >= 1, ErrKind::config,
            "um schema needs at least one cortical and one subcortical label");
    LabelSchema s;
    s.schema_id = "um";
    uint16_t id = 1;
    for (int i = 0; i < cortical_count; ++i, ++id)
        s.entries.push_back({id, "cortical_" + std::to_string(i + 1)});
    for (int i = 0; i < subcortical_count; ++i, ++id)
        s.entries.push_back({id, "subcortical_" + std::to_string(i + 1)});
    const uint16_t tumor_id = id;
    s.entries.push_back({tumor_id, "tumor"});

    const uint16_t cort_last = static_cast<uint16_t>(cortical_count);
    const uint16_t sub_last = static_cast<uint16_t>(cortical_count + subcortical_count);
    s.groups = {
        {"cortical", id_range(1, cort_last)},
        {"subcortical", id_range(static_cast<uint16_t>(cort_last + 1), sub_last)},
        {"whole_brain", id_range(1, sub_last)},
        {"tumor_all", {tumor_id}},
    };
    s.validate();
    return s;
}

const std::vector<uint16_t>& resolve_group(const LabelSchema& schema, const std::string& name) {
    for (const auto& g : schema.groups)
        if (g.name == name) return g.members;
    fail(ErrKind::schema, "schema '" + schema.schema_id + "' has no group '" + name + "'");
}

const std::vector<uint16_t>& tumor_labels(const LabelSchema& schema) {
    if (schema.has_group("tumor_all")) return resolve_group(schema, "tumor_all");
    if (schema.has_group("whole_tumor")) return resolve_group(schema, "whole_tumor");
    fail(ErrKind::schema, "schema '" + schema.schema_id + "' declares no tumor group");
}

std::string schema_to_json(const LabelSchema& schema) {
    nlohmann::ordered_json j;
    j["schema_id"] = schema.schema_id;
    j["entries"] = nlohmann::ordered_json::array();
    for (const auto& e : schema.entries) j["entries"].push_back({{"id", e.id}, {"name", e.name}});
    j["groups"] = nlohmann::ordered_json::object();
    for (const auto& g : schema.groups) j["groups"][g.name] = g.members;
    return j.dump(2) + "\n";
}

LabelSchema schema_from_json(const std::string& text) {
    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrKind::format, std::string("schema json: ") + e.what());
    }
    LabelSchema s;
    try {
        s.schema_id = j.at("schema_id").get<std::string>();
        for (const auto& e : j.at("entries"))
            s.entries.push_back({e.at("id").get<uint16_t>(), e.at("name").get<std::string>()});
        for (const auto& [name, members] : j.at("groups").items()) {
            RegionGroup g;
            g.name = name;
            for (const auto& id : members) g.members.push_back(id.get<uint16_t>());
            std::sort(g.members.begin(), g.members.end());
            s.groups.push_back(std::move(g));
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrKind::format, std::string("schema json: ") + e.what());
    }
    s.validate();
    return s;
}

LabelSchema load_schema(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrKind::io, "cannot open schema file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return schema_from_json(buf.str());
}

void save_schema(const LabelSchema& schema, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrKind::io, "cannot write schema file: " + path);
    out << schema_to_json(schema);
    require(out.good(), ErrKind::io, "short write on schema file: " + path);
}

}  // namespace uqseg
