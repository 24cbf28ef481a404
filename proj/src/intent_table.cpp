#include "reflectdiffu/intent_table.hpp"

#include <fstream>
#include <json.hpp>
#include <stdexcept>

namespace rd {

IntentTable::IntentTable(int version, std::vector<Row> rows, std::size_t pos_fallback, std::size_t neg_fallback)
    : version_(version), rows_(std::move(rows)), pos_fallback_(pos_fallback), neg_fallback_(neg_fallback) {
    if (pos_fallback_ >= rows_.size() || neg_fallback_ >= rows_.size())
        throw std::invalid_argument("IntentTable: fallback row out of range");
    row_index_.fill(-1);
    for (std::size_t r = 0; r < rows_.size(); ++r)
        for (Emotion e : rows_[r].emotions) {
            if (row_index_[index(e)] != -1)
                throw std::invalid_argument("IntentTable: emotion listed twice: " + std::string(to_string(e)));
            row_index_[index(e)] = static_cast<int>(r);
        }
}

const IntentTable& IntentTable::builtin() {
    using E = Emotion;
    using I = Intent;
    // The source table repeats the hopeful/sentimental row and lists faithful
    // twice; here each emotion has exactly one row, faithful in the second.
    static const IntentTable table(
        1,
        {
            {{E::surprised, E::proud, E::impressed, E::nostalgic, E::trusting, E::prepared},
             {I::acknowledging, I::encouraging, I::neutral}},
            {{E::excited, E::confident, E::joyful, E::grateful, E::content, E::caring, E::faithful},
             {I::encouraging, I::sympathizing, I::acknowledging}},
            {{E::angry, E::disappointed}, {I::consoling, I::suggesting, I::encouraging}},
            {{E::hopeful, E::sentimental}, {I::encouraging, I::wishing, I::consoling}},
            {{E::anticipating, E::lonely, E::afraid, E::anxious, E::guilty, E::embarrassed, E::sad, E::apprehensive,
              E::terrified, E::jealous},
             {I::consoling, I::encouraging, I::neutral}},
        },
        0, 4);
    return table;
}

IntentTable IntentTable::load_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open intent table: " + path.string());
    try {
        const auto j = nlohmann::json::parse(in);
        std::vector<Row> rows;
        for (const auto& jr : j.at("rows")) {
            Row row;
            for (const auto& je : jr.at("emotions")) {
                auto e = parse_emotion(je.get<std::string>());
                if (!e) throw std::runtime_error("unknown emotion " + je.dump());
                row.emotions.push_back(*e);
            }
            const auto& ji = jr.at("intents");
            if (ji.size() != 3) throw std::runtime_error("every row needs exactly 3 intents");
            for (std::size_t k = 0; k < 3; ++k) {
                auto i = parse_intent(ji[k].get<std::string>());
                if (!i) throw std::runtime_error("unknown intent " + ji[k].dump());
                row.intents[k] = *i;
            }
            rows.push_back(std::move(row));
        }
        return IntentTable(j.at("version").get<int>(), std::move(rows), j.at("fallback").at("pos").get<std::size_t>(),
                           j.at("fallback").at("neg").get<std::size_t>());
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("malformed intent table " + path.string() + ": " + e.what());
    }
}

std::size_t IntentTable::row_of(Emotion e) const {
    const int r = row_index_[index(e)];
    if (r >= 0) return static_cast<std::size_t>(r);
    return polarity(e) == Polarity::pos ? pos_fallback_ : neg_fallback_;
}

ReferIntents IntentTable::lookup(Emotion e) const { return rows_[row_of(e)].intents; }

bool IntentTable::listed(Emotion e) const { return row_index_[index(e)] >= 0; }

bool IntentTable::operator==(const IntentTable& other) const {
    if (version_ != other.version_ || pos_fallback_ != other.pos_fallback_ || neg_fallback_ != other.neg_fallback_ ||
        rows_.size() != other.rows_.size())
        return false;
    for (std::size_t r = 0; r < rows_.size(); ++r)
        if (rows_[r].emotions != other.rows_[r].emotions || rows_[r].intents != other.rows_[r].intents) return false;
    return true;
}

}  // namespace rd
