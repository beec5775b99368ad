// Reserved label ids shared by every vocabulary.

#ifndef CIF_LABELS_H_
#define CIF_LABELS_H_

namespace cif {

inline constexpr int kBlankId = 0;
inline constexpr int kEosId = 1;
inline constexpr int kPadId = 2;
inline constexpr int kReservedLabels = 3;

}  // namespace cif

#endif  // CIF_LABELS_H_
