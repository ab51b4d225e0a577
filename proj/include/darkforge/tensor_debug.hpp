#pragma once

namespace darkforge {

/// When on, every op output is scanned and a NumericalError is raised if a
/// NaN/Inf appears from finite inputs. Defaults to on in debug builds.
void set_finite_checks(bool on);
bool finite_checks();

}  // namespace darkforge
