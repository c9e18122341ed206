// Copyright Contributors to the occfield project
// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace occ {

/// Process-wide allocator settings for executables. Every tensor op allocates
/// a fresh buffer, and with glibc's default trim/mmap thresholds freed
/// multi-megabyte buffers go back to the kernel and fault in again on the
/// next op. Call once at startup; a no-op on other C libraries.
void configure_allocator();

} // namespace occ
