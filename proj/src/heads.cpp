#include "xmodal/heads.hpp"

#include "xmodal/errors.hpp"

namespace xmodal {

std::string_view to_string(Condition c) {
    switch (c) {
        case Condition::ecg_only: return "ecg_only";
        case Condition::mri_only: return "mri_only";
        case Condition::ecg_and_mri: return "ecg_and_mri";
    }
    return "ecg_only";
}

std::string_view to_string(PhenotypeKind k) {
    return k == PhenotypeKind::binary ? "binary" : "continuous";
}

PhenotypeKind phenotype_kind_from_string(std::string_view s) {
    if (s == "binary") return PhenotypeKind::binary;
    if (s == "continuous") return PhenotypeKind::continuous;
    throw ArgumentError("unknown phenotype kind '" + std::string(s) + "'");
}

}  // namespace xmodal
