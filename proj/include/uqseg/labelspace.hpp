#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace uqseg {

struct LabelEntry {
    uint16_t id = 0;
    std::string name;
};

// Named set of label ids. Declaration order is preserved so that CSV columns
// and palette assignment stay stable across runs.
struct RegionGroup {
    std::string name;
    std::vector<uint16_t> members;  // sorted, unique, never contains 0
};

// Label id <-> region name table plus named composite groups.
// Label 0 is implicitly background: never listed in entries or groups.
struct LabelSchema {
    std::string schema_id;
    std::vector<LabelEntry> entries;
    std::vector<RegionGroup> groups;

    bool has_label(uint16_t id) const;
    bool has_group(const std::string& name) const;
    uint16_t max_label() const;
    void validate() const;  // throws Error(schema) on a broken table
};

enum class SchemaKind { CM, UM };

// CM: background + {1 necrotic core, 2 edema, 3 enhancing tumor} with the
// standard composite groups. UM: 53 healthy structures (31 cortical,
// 22 subcortical) plus one combined tumor label.
LabelSchema builtin_schema(SchemaKind kind);

// UM-style schema with a configurable healthy-label count.
LabelSchema make_um_schema(int cortical_count, int subcortical_count);

// Member set of a named group; Error(schema) for an unknown name.
const std::vector<uint16_t>& resolve_group(const LabelSchema& schema, const std::string& name);

// The combined-tumor label set: group "tumor_all" when present, else
// "whole_tumor". Error(schema) when the schema declares neither.
const std::vector<uint16_t>& tumor_labels(const LabelSchema& schema);

std::string schema_to_json(const LabelSchema& schema);
LabelSchema schema_from_json(const std::string& text);
LabelSchema load_schema(const std::string& path);
void save_schema(const LabelSchema& schema, const std::string& path);

}  // namespace uqseg
