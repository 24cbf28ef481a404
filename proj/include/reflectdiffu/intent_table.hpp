#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "reflectdiffu/labels.hpp"

namespace rd {

using ReferIntents = std::array<Intent, 3>;

/// Emotion-group to top-3 reference intents. Lookups are total: emotions
/// missing from every row fall back by polarity.
class IntentTable {
public:
    struct Row {
        std::vector<Emotion> emotions;
        ReferIntents intents;
    };

    IntentTable(int version, std::vector<Row> rows, std::size_t pos_fallback, std::size_t neg_fallback);

    static const IntentTable& builtin();
    /// {"version": 1, "rows": [{"emotions": [...], "intents": [a, b, c]}], "fallback": {"pos": i, "neg": j}}
    static IntentTable load_json(const std::filesystem::path& path);

    ReferIntents lookup(Emotion e) const;
    /// Index of the row that answers lookup(e).
    std::size_t row_of(Emotion e) const;
    bool listed(Emotion e) const;

    int version() const { return version_; }
    const std::vector<Row>& rows() const { return rows_; }
    std::size_t pos_fallback() const { return pos_fallback_; }
    std::size_t neg_fallback() const { return neg_fallback_; }

    bool operator==(const IntentTable& other) const;

private:
    int version_;
    std::vector<Row> rows_;
    std::size_t pos_fallback_, neg_fallback_;
    std::array<int, kNumEmotions> row_index_{};  // -1 = unlisted
};

inline ReferIntents lookup_refer_intents(Emotion e) { return IntentTable::builtin().lookup(e); }

}  // namespace rd
