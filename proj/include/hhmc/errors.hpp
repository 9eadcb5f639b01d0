#pragma once

#include <stdexcept>
#include <string>

namespace hhmc {

struct Error : std::runtime_error {
    explicit Error(const std::string &what) : std::runtime_error(what) {}
};

#define HHMC_DEFINE_ERROR(Name)                                               \
    struct Name : Error {                                                     \
        explicit Name(const std::string &what) : Error(#Name ": " + what) {}  \
    }

HHMC_DEFINE_ERROR(NonPositiveEigenvalue);
HHMC_DEFINE_ERROR(UnsortedSpectrum);
HHMC_DEFINE_ERROR(GammaOutOfRange);
HHMC_DEFINE_ERROR(NotTraceClass);
HHMC_DEFINE_ERROR(DimensionMismatch);
HHMC_DEFINE_ERROR(BadN);
HHMC_DEFINE_ERROR(NonFinite);
HHMC_DEFINE_ERROR(ToleranceNotMet);
HHMC_DEFINE_ERROR(NegativeFrequencySquared);
HHMC_DEFINE_ERROR(TimeConditionViolated);
HHMC_DEFINE_ERROR(MissingConstants);
HHMC_DEFINE_ERROR(PendulumSingularT);
HHMC_DEFINE_ERROR(ConditionsViolated);
HHMC_DEFINE_ERROR(NoSpectralGap);
HHMC_DEFINE_ERROR(EmptySample);
HHMC_DEFINE_ERROR(Overflow);
HHMC_DEFINE_ERROR(EtaTooLarge);
HHMC_DEFINE_ERROR(DriftViolated);
HHMC_DEFINE_ERROR(TrajectoryTooShort);
HHMC_DEFINE_ERROR(MissingGradient);
HHMC_DEFINE_ERROR(CFLViolated);
HHMC_DEFINE_ERROR(MissingSnapshot);
HHMC_DEFINE_ERROR(ConfigInvalid);

#undef HHMC_DEFINE_ERROR

} // namespace hhmc
